use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use defatc::config::{load_config, ExperimentConfig};
use defatc::export::{rd_to_dir, run_to_dir, write_json};
use defatc::verify::{verify, VerifyOptions};

#[derive(Parser)]
#[command(name = "defatc", version, about = "Compressed decentralized learning under subspace constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo learning curves: msd.csv, rate.csv, metadata.json.
    Run(Common),
    /// Rate-distortion sweep over ε and (ζ, γ): rd.csv, metadata.json.
    RdCurve(Common),
    /// Property suite on the configured problem; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Draws per distortion-audit input.
        #[arg(long, default_value_t = VerifyOptions::default().trials)]
        trials: usize,
    },
    /// Step-parameter stability conditions, printed as JSON.
    StabilityCheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `out` in the config, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        if let Some(jobs) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build_global()
                .context("configuring the worker pool")?;
        }
        let mut config =
            load_config(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.validate().context("configuration invalid with the overridden seed")?;
        }
        let out = self
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((config, out))
    }
}

fn run(common: &Common) -> Result<bool> {
    let (config, out) = common.load()?;
    let summaries = run_to_dir(&config, &out).context("running experiment")?;
    for s in &summaries {
        let db = s.steady_state_msd_db.map_or("n/a".to_string(), |v| format!("{v:.3} dB"));
        let rate = s.steady_state_rate.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("mu={} iterations={} msd={db} rate={rate} bits/component", s.mu, s.iterations);
    }
    println!("wrote {}", out.display());
    Ok(true)
}

fn rd_curve(common: &Common) -> Result<bool> {
    let (config, out) = common.load()?;
    let all = rd_to_dir(&config, &out).context("running rate-distortion sweep")?;
    let mut ok = true;
    for (mu, points) in &all {
        let failed = points.iter().filter(|p| p.error.is_some()).count();
        let hull = points.iter().filter(|p| p.on_hull).count();
        println!("mu={mu} points={} on_hull={hull} diverged={failed}", points.len());
        ok &= failed == 0;
    }
    println!("wrote {}", out.display());
    Ok(ok)
}

fn verify_cmd(common: &Common, trials: usize) -> Result<bool> {
    let (config, out) = common.load()?;
    let options = VerifyOptions { trials, ..VerifyOptions::default() };
    let report = verify(&config, &options).context("running property suite")?;
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("verify.json"), &report)?;
    for c in &report.checks {
        println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    println!("wrote {}", out.join("verify.json").display());
    Ok(report.passed)
}

fn stability(common: &Common) -> Result<bool> {
    let (config, out) = common.load()?;
    let scenario = config.build_scenario()?;
    let report = config.stability(&scenario).context("evaluating stability conditions")?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if common.out.is_some() || config.out.is_some() {
        std::fs::create_dir_all(&out)?;
        write_json(&out.join("stability.json"), &report)?;
    }
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    // The conditions are sufficient, not necessary; an unsatisfied report
    // is still a successful evaluation.
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => run(c),
        Command::RdCurve(c) => rd_curve(c),
        Command::Verify { common, trials } => verify_cmd(common, *trials),
        Command::StabilityCheck(c) => stability(c),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
