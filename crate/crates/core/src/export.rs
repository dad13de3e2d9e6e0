//! Result files. Every file carries the hash of the configuration that
//! produced it: CSVs on a leading `# config_hash: <hex>` line, JSON in a
//! `config_hash` field.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::engine::{MetricsTrace, Scenario, TraceSpec};
use crate::error::{Error, Result};
use crate::metrics::{monte_carlo, rd_sweep, steady_state, to_db, RDPoint};
use crate::rng;

pub const HASH_PREFIX: &str = "# config_hash: ";

fn json_error(e: serde_json::Error) -> Error {
    Error::Io(io::Error::other(e))
}

/// Compact JSON of the configuration with fields in declaration order. The
/// output directory is not part of it.
pub fn canonical_json(config: &ExperimentConfig) -> Result<String> {
    serde_json::to_string(config).map_err(json_error)
}

/// SHA-256 over `"config <len>\0"` followed by the canonical JSON.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let json = canonical_json(config)?;
    let mut h = Sha256::new();
    h.update(format!("config {}\0", json.len()).as_bytes());
    h.update(json.as_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Hash recorded on the first line of a CSV written by this module.
pub fn read_config_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .map(str::to_string))
}

fn write_csv(path: &Path, hash: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{HASH_PREFIX}{hash}")?;
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// `msd.csv` and `rate.csv`, keeping every `thinning`-th iteration plus the
/// last one.
pub fn write_curves(dir: &Path, hash: &str, trace: &MetricsTrace, thinning: usize) -> Result<()> {
    let thinning = thinning.max(1);
    let last = trace.len().saturating_sub(1);
    let keep = move |i: &usize| i % thinning == 0 || *i == last;
    write_csv(
        &dir.join("msd.csv"),
        hash,
        "iteration,msd_db",
        (0..trace.len()).filter(keep).map(|i| format!("{i},{}", to_db(trace.msd[i]))),
    )?;
    write_csv(
        &dir.join("rate.csv"),
        hash,
        "iteration,bits_per_component",
        (0..trace.len()).filter(keep).map(|i| format!("{i},{}", trace.rate[i])),
    )
}

pub fn write_rd(path: &Path, hash: &str, points: &[RDPoint]) -> Result<()> {
    write_csv(
        path,
        hash,
        "epsilon,zeta,gamma,resolution,rate,msd_db,on_hull",
        points.iter().map(|p| {
            format!(
                "{},{},{},{},{},{},{}",
                p.epsilon, p.zeta, p.gamma, p.resolution, p.rate, p.msd_db, p.on_hull
            )
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_error)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Summary of one step size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuSummary {
    pub mu: f64,
    pub iterations: usize,
    pub run_seeds: Vec<u64>,
    /// Absent when the trace is not longer than the window.
    pub steady_state_msd_db: Option<f64>,
    pub steady_state_rate: Option<f64>,
    pub feedback_residual: f64,
    /// Output subdirectory, relative to the top-level directory.
    pub directory: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata<'a> {
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub master_seed: u64,
    pub version: &'static str,
    /// Per-agent regressor and noise variances actually used.
    pub sigma_u_sq: Vec<f64>,
    pub sigma_v_sq: Vec<f64>,
    pub mu: Vec<MuSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rd_points: Option<usize>,
}

fn mu_dir(out: &Path, mu: f64, many: bool) -> (PathBuf, PathBuf) {
    if many {
        let rel = PathBuf::from(format!("mu-{mu}"));
        (out.join(&rel), rel)
    } else {
        (out.to_path_buf(), PathBuf::from("."))
    }
}

fn metadata<'a>(config: &'a ExperimentConfig, hash: String, scenario: &Scenario) -> Metadata<'a> {
    Metadata {
        config_hash: hash,
        config,
        master_seed: config.seed,
        version: env!("CARGO_PKG_VERSION"),
        sigma_u_sq: scenario.model.sigma_u_sq().to_vec(),
        sigma_v_sq: scenario.model.sigma_v_sq().to_vec(),
        mu: Vec::new(),
        rd_points: None,
    }
}

/// Runs the Monte Carlo experiment for every configured step size and
/// writes `msd.csv`, `rate.csv` and `metadata.json` under `out`. With more
/// than one step size each gets its own `mu-<μ>` subdirectory.
pub fn run_to_dir(config: &ExperimentConfig, out: &Path) -> Result<Vec<MuSummary>> {
    let hash = config_hash(config)?;
    let scenario = config.build_scenario()?;
    let mus = config.mus();
    let many = mus.len() > 1;
    let mut meta = metadata(config, hash.clone(), &scenario);
    for &mu in &mus {
        let run = config.run_config(&scenario, mu);
        let trace = monte_carlo(&scenario, &run, config.algorithm, config.runs, TraceSpec::default())?;
        let (dir, rel) = mu_dir(out, mu, many);
        fs::create_dir_all(&dir)?;
        write_curves(&dir, &hash, &trace, config.thinning)?;
        let summary = MuSummary {
            mu,
            iterations: run.iterations,
            run_seeds: trace.seeds.clone(),
            steady_state_msd_db: steady_state(&trace.msd, config.window).ok().map(to_db),
            steady_state_rate: steady_state(&trace.rate, config.window).ok(),
            feedback_residual: trace.feedback_residual,
            directory: rel,
        };
        if many {
            write_json(&dir.join("metadata.json"), &Metadata { mu: vec![summary.clone()], ..meta.clone() })?;
        }
        meta.mu.push(summary);
    }
    fs::create_dir_all(out)?;
    write_json(&out.join("metadata.json"), &meta)?;
    Ok(meta.mu)
}

/// Rate-distortion sweep for every configured step size; writes `rd.csv`
/// and `metadata.json`.
pub fn rd_to_dir(config: &ExperimentConfig, out: &Path) -> Result<Vec<(f64, Vec<RDPoint>)>> {
    let hash = config_hash(config)?;
    let scenario = config.build_scenario()?;
    let sweep = config.sweep();
    let mus = config.mus();
    let many = mus.len() > 1;
    let mut meta = metadata(config, hash.clone(), &scenario);
    let mut all = Vec::new();
    for &mu in &mus {
        let run = config.run_config(&scenario, mu);
        let points = rd_sweep(&scenario, &run, config.algorithm, &sweep)?;
        let (dir, rel) = mu_dir(out, mu, many);
        fs::create_dir_all(&dir)?;
        write_rd(&dir.join("rd.csv"), &hash, &points)?;
        meta.mu.push(MuSummary {
            mu,
            iterations: run.iterations,
            run_seeds: (0..sweep.runs as u64).map(|r| rng::run_seed(config.seed, r)).collect(),
            steady_state_msd_db: None,
            steady_state_rate: None,
            feedback_residual: 0.0,
            directory: rel,
        });
        all.push((mu, points));
    }
    meta.rd_points = Some(all.iter().map(|(_, p)| p.len()).sum());
    fs::create_dir_all(out)?;
    write_json(&out.join("metadata.json"), &meta)?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const CFG: &str = r#"
        seed = 3
        runs = 2
        mu = 0.05
        iterations = 120
        window = 20
        thinning = 10
        [topology]
        kind = "ring"
        agents = 4
        dim = 2
        [model]
        sigma_u_sq = 1.0
        sigma_v_sq = 0.01
        [operator]
        kind = "top-c-quantizer"
        c = 1
        inner = { kind = "dithered-uniform", step = 0.1 }
    "#;

    #[test]
    fn hash_ignores_output_dir_but_not_parameters() {
        let a = parse_config(CFG).unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.zeta = 0.5;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn hash_prefix_is_length_framed() {
        let cfg = parse_config(CFG).unwrap();
        let json = canonical_json(&cfg).unwrap();
        let mut h = Sha256::new();
        h.update(format!("config {}\0{json}", json.len()).as_bytes());
        assert_eq!(config_hash(&cfg).unwrap(), hex::encode(h.finalize()));
    }

    #[test]
    fn run_writes_hashed_files() {
        let cfg = parse_config(CFG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_to_dir(&cfg, dir.path()).unwrap();
        let hash = config_hash(&cfg).unwrap();
        for f in ["msd.csv", "rate.csv"] {
            assert_eq!(read_config_hash(&dir.path().join(f)).unwrap().as_deref(), Some(hash.as_str()));
        }
        let msd = fs::read_to_string(dir.path().join("msd.csv")).unwrap();
        let rows: Vec<&str> = msd.lines().skip(2).collect();
        // iterations 0, 10, ..., 120
        assert_eq!(rows.len(), 13);
        assert!(rows[12].starts_with("120,"));
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["config_hash"], hash);
        assert_eq!(meta["mu"][0]["run_seeds"].as_array().unwrap().len(), 2);
        assert_eq!(summary[0].run_seeds, vec![rng::run_seed(3, 0), rng::run_seed(3, 1)]);
        assert!(summary[0].steady_state_msd_db.unwrap().is_finite());
    }

    #[test]
    fn curves_round_trip_exactly() {
        let cfg = parse_config(&CFG.replace("thinning = 10", "thinning = 1")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_to_dir(&cfg, dir.path()).unwrap();
        let scenario = cfg.build_scenario().unwrap();
        let run = cfg.run_config(&scenario, 0.05);
        let trace = monte_carlo(&scenario, &run, cfg.algorithm, cfg.runs, TraceSpec::default()).unwrap();
        let rate = fs::read_to_string(dir.path().join("rate.csv")).unwrap();
        for (i, line) in rate.lines().skip(2).enumerate() {
            let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(v, trace.rate[i]);
        }
    }

    #[test]
    fn several_step_sizes_get_subdirectories() {
        let cfg = parse_config(&CFG.replace("mu = 0.05", "mu = [0.05, 0.02]")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_to_dir(&cfg, dir.path()).unwrap();
        for sub in ["mu-0.05", "mu-0.02"] {
            for f in ["msd.csv", "rate.csv", "metadata.json"] {
                assert!(dir.path().join(sub).join(f).exists(), "{sub}/{f}");
            }
        }
        assert!(dir.path().join("metadata.json").exists());
    }

    #[test]
    fn rd_csv_has_one_row_per_point() {
        let text = format!("{CFG}\n[rd]\nepsilon = [0.2, 0.6, 1.0]\nzeta = [0.5, 1.0]\n");
        let cfg = parse_config(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = rd_to_dir(&cfg, dir.path()).unwrap();
        assert_eq!(out[0].1.len(), 6);
        assert!(out[0].1.iter().any(|p| p.on_hull));
        let csv = fs::read_to_string(dir.path().join("rd.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2 + 6);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "epsilon,zeta,gamma,resolution,rate,msd_db,on_hull"
        );
    }
}
