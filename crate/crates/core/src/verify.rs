//! Property suite run by the `verify` subcommand: matrix invariants,
//! distortion audits and the algorithmic identities, evaluated on the
//! configured problem.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::compression::{OperatorKind, OperatorSpec};
use crate::config::ExperimentConfig;
use crate::diagnostics::{audit_inputs, distortion_audit, top_c_energy_holds};
use crate::engine::{run_experiment, Algorithm, RunConfig, Scenario, Simulation, TraceSpec};
use crate::error::Result;
use crate::export::config_hash;
use crate::rng::{self, Purpose};
use crate::topology::SubspaceCheck;

/// Tolerance for the ATC reduction and the matrix conditions.
pub const IDENTITY_TOL: f64 = 1e-12;
pub const MATRIX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Draws per audit input.
    pub trials: usize,
    /// Audit inputs per operator, spread over three decades of norm.
    pub inputs: usize,
    /// Random vectors for the top-c kept-energy inequality.
    pub energy_vectors: usize,
    /// Iterations for the reduction, bookkeeping and determinism checks.
    pub iterations: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: 10_000, inputs: 20, energy_vectors: 10_000, iterations: 1_000 }
    }
}

/// One instance of every operator family at input length `len`.
pub fn operator_catalogue(len: usize) -> Vec<OperatorSpec> {
    let c = len.min(4);
    let kinds = vec![
        OperatorKind::Identity,
        OperatorKind::DitheredUniform { step: 0.5 },
        OperatorKind::Anq { omega: 0.5, eta: 0.1 },
        OperatorKind::RandC { c, unbiased: false },
        OperatorKind::RandC { c, unbiased: true },
        OperatorKind::Gossip { q: 0.6, unbiased: false },
        OperatorKind::Gossip { q: 0.6, unbiased: true },
        OperatorKind::Qsgd { s: 2 },
        OperatorKind::TopCSparsifier { c },
    ];
    let inner = [
        OperatorKind::DitheredUniform { step: 0.5 },
        OperatorKind::Anq { omega: 0.5, eta: 0.1 },
        OperatorKind::Qsgd { s: 2 },
        OperatorKind::RandC { c: (c / 2).max(1), unbiased: true },
    ];
    kinds
        .into_iter()
        .map(OperatorSpec::from)
        .chain(inner.into_iter().map(|k| OperatorSpec::top_c(c, k)))
        .collect()
}

fn check(name: &str, passed: bool, detail: Value) -> Check {
    Check { name: name.to_string(), passed, detail }
}

fn matrix_checks(scenario: &Scenario) -> Vec<Check> {
    let u = scenario.basis.matrix();
    let a = scenario.combination.matrix();
    let sub = SubspaceCheck::evaluate(a, &scenario.basis);
    let ortho = scenario.basis.orthonormality_defect();
    vec![
        check(
            "combination_matrix",
            sub.right_defect <= MATRIX_TOL && sub.left_defect <= MATRIX_TOL && sub.spectral_radius < 1.0,
            serde_json::to_value(sub).unwrap_or(Value::Null),
        ),
        check("basis_orthonormal", ortho <= MATRIX_TOL, json!({ "max_abs_defect": ortho, "rank": u.ncols() })),
    ]
}

fn ground_truth_check(scenario: &Scenario) -> Check {
    let w = scenario.truth.stacked();
    let in_range = (scenario.basis.project(w) - w).amax();
    // First-order optimality on Range(U): Uᵀ D (W° − W*) = 0 with D the
    // block-diagonal Hessian 2σ²_u I.
    let topo = &scenario.topology;
    let su = scenario.model.sigma_u_sq();
    let m = topo.total_dim();
    let d = DMatrix::from_fn(m, m, |i, j| {
        if i != j {
            return 0.0;
        }
        let k = (0..topo.agents()).rev().find(|&k| topo.offset(k) <= i).unwrap_or(0);
        2.0 * su[k]
    });
    let residual = scenario.basis.matrix().transpose() * d * (w - scenario.model.stacked_w_star());
    let stationarity = residual.amax();
    let scale = scenario.model.stacked_w_star().amax().max(1.0);
    check(
        "ground_truth",
        in_range <= MATRIX_TOL * scale && stationarity <= MATRIX_TOL * scale,
        json!({ "range_defect": in_range, "stationarity_residual": stationarity }),
    )
}

fn audit_checks(len: usize, options: &VerifyOptions, seed: u64) -> Result<Vec<Check>> {
    let inputs = audit_inputs(len, options.inputs, 0.1, 3.0, seed);
    let catalogue = operator_catalogue(len);
    let audits = catalogue
        .par_iter()
        .enumerate()
        .map(|(i, op)| distortion_audit(op, &inputs, options.trials, rng::run_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(audits
        .into_iter()
        .map(|a| {
            let worst = a
                .cases
                .iter()
                .map(|c| (c.empirical_mse - c.bound) / c.std_error.max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max);
            let detail = json!({
                "operator": a.operator,
                "beta_sq": a.params.beta_sq,
                "sigma_sq": a.params.sigma_sq,
                "unbiased": a.params.unbiased,
                "trials": a.trials,
                "inputs": a.cases.len(),
                "worst_excess_in_std_errors": if worst.is_finite() { json!(worst) } else { Value::Null },
                "bias_failures": a.cases.iter().filter(|c| !c.unbiased_ok).count(),
            });
            check(&format!("distortion_audit/{}", kind_name(&a.operator.kind)), a.passed, detail)
        })
        .collect())
}

fn kind_name(kind: &OperatorKind) -> String {
    match kind {
        OperatorKind::Identity => "identity".into(),
        OperatorKind::DitheredUniform { .. } => "dithered-uniform".into(),
        OperatorKind::Anq { .. } => "anq".into(),
        OperatorKind::RandC { unbiased, .. } => format!("rand-c{}", if *unbiased { "-unbiased" } else { "" }),
        OperatorKind::Gossip { unbiased, .. } => format!("gossip{}", if *unbiased { "-unbiased" } else { "" }),
        OperatorKind::Qsgd { .. } => "qsgd".into(),
        OperatorKind::TopCSparsifier { .. } => "top-c-sparsifier".into(),
        OperatorKind::TopCQuantizer { inner, .. } => format!("top-c+{}", kind_name(inner)),
    }
}

fn energy_check(len: usize, count: usize, seed: u64) -> Check {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng::stream(seed, Purpose::Setup, 1, 1);
    let mut violations = 0usize;
    for n in 0..count {
        let c = 1 + n % len;
        let x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        if !top_c_energy_holds(&x, c) {
            violations += 1;
        }
    }
    check("top_c_kept_energy", violations == 0, json!({ "vectors": count, "violations": violations }))
}

fn reduction_check(scenario: &Scenario, config: &ExperimentConfig, mu: f64, iterations: usize) -> Result<Check> {
    let run = RunConfig::uniform(scenario.agents(), mu, 1.0, 1.0, iterations, OperatorSpec::identity(), config.seed);
    let mut atc = Simulation::new(scenario, &run, Algorithm::Atc)?;
    let mut def = Simulation::new(scenario, &run, Algorithm::DefAtc)?;
    let mut worst = 0.0f64;
    for _ in 0..iterations {
        atc.step()?;
        def.step()?;
        worst = worst.max((atc.stacked_w() - def.stacked_w()).amax());
    }
    Ok(check(
        "identity_reduces_to_atc",
        worst <= IDENTITY_TOL,
        json!({ "iterations": iterations, "max_abs_difference": worst }),
    ))
}

fn bookkeeping_check(scenario: &Scenario, run: &RunConfig) -> Result<Check> {
    let mut sim = Simulation::new(scenario, run, Algorithm::DefAtc)?;
    let (mut residual, mut inconsistent) = (0.0f64, 0usize);
    for _ in 0..run.iterations {
        residual = residual.max(sim.step()?.feedback_residual);
        if !sim.broadcast_consistent() {
            inconsistent += 1;
        }
    }
    Ok(check(
        "error_feedback_bookkeeping",
        residual == 0.0 && inconsistent == 0,
        json!({ "iterations": run.iterations, "max_residual": residual, "inconsistent_steps": inconsistent }),
    ))
}

fn determinism_check(scenario: &Scenario, run: &RunConfig, algorithm: Algorithm) -> Result<Check> {
    let a = run_experiment(scenario, run, algorithm, TraceSpec { record_agents: true })?;
    let b = run_experiment(scenario, run, algorithm, TraceSpec { record_agents: true })?;
    let bits = |t: &crate::engine::MetricsTrace| -> Vec<u64> {
        t.msd.iter().chain(&t.rate).map(|v| v.to_bits()).collect()
    };
    let identical = bits(&a) == bits(&b) && a.agent_sq_error == b.agent_sq_error && a.agent_bits == b.agent_bits;
    Ok(check("fixed_seed_determinism", identical, json!({ "iterations": run.iterations, "seed": run.seed })))
}

/// Runs the whole suite. Problems that prevent a check from running (for
/// example a divergence) are reported as failed checks, not errors.
pub fn verify(config: &ExperimentConfig, options: &VerifyOptions) -> Result<VerifyReport> {
    let hash = config_hash(config)?;
    let scenario = config.build_scenario()?;
    let mu = config.mus()[0];
    let len = scenario.topology.dims().iter().copied().min().unwrap_or(1);
    let mut run = config.run_config(&scenario, mu);
    run.iterations = options.iterations;

    let mut checks = matrix_checks(&scenario);
    checks.push(ground_truth_check(&scenario));
    checks.extend(audit_checks(len, options, config.seed)?);
    let configured = distortion_audit(
        &run.operators[0],
        &audit_inputs(len, options.inputs, 0.1, 3.0, config.seed),
        options.trials,
        config.seed,
    )?;
    checks.push(check(
        "distortion_audit/configured",
        configured.passed,
        json!({ "operator": configured.operator, "beta_sq": configured.params.beta_sq, "sigma_sq": configured.params.sigma_sq }),
    ));
    checks.push(energy_check(len.max(1), options.energy_vectors, config.seed));
    let dynamic = [
        ("identity_reduces_to_atc", reduction_check(&scenario, config, mu, options.iterations)),
        ("error_feedback_bookkeeping", bookkeeping_check(&scenario, &run)),
        ("fixed_seed_determinism", determinism_check(&scenario, &run, config.algorithm)),
    ];
    for (name, outcome) in dynamic {
        checks.push(outcome.unwrap_or_else(|e| check(name, false, json!({ "error": e.to_string() }))));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { config_hash: hash, passed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const CFG: &str = r#"
        mu = 0.01
        [topology]
        kind = "ring"
        agents = 5
        dim = 4
        [model]
        sigma_u_sq = { range = [0.8, 1.2] }
        sigma_v_sq = 0.5
        [operator]
        kind = "top-c-quantizer"
        c = 2
        inner = { kind = "dithered-uniform", step = 0.01 }
    "#;

    fn quick() -> VerifyOptions {
        VerifyOptions { trials: 1000, inputs: 4, energy_vectors: 200, iterations: 50 }
    }

    #[test]
    fn catalogue_covers_every_family_and_validates() {
        let ops = operator_catalogue(10);
        assert_eq!(ops.len(), 13);
        for op in &ops {
            op.validate(10).unwrap();
        }
        for op in operator_catalogue(1) {
            op.validate(1).unwrap();
        }
    }

    #[test]
    fn suite_passes_on_small_config() {
        let cfg = parse_config(CFG).unwrap();
        let report = verify(&cfg, &quick()).unwrap();
        let failed: Vec<_> = report.failures().map(|c| &c.name).collect();
        assert!(report.passed, "failed: {failed:?}");
        assert_eq!(report.checks.len(), 2 + 1 + 13 + 1 + 1 + 3);
    }

    #[test]
    fn divergence_becomes_a_failed_check() {
        let cfg = parse_config(&CFG.replace("mu = 0.01", "mu = 5.0")).unwrap();
        let report = verify(&cfg, &quick()).unwrap();
        assert!(!report.passed);
        let c = report.checks.iter().find(|c| c.name == "identity_reduces_to_atc").unwrap();
        assert!(c.detail["error"].as_str().unwrap().contains("diverged"));
    }
}
