//! Steady-state estimators, Monte Carlo averaging, rate-distortion sweeps
//! and the lower convex hull of rate-distortion points.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_experiment, Algorithm, MetricsTrace, RunConfig, Scenario, TraceSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Samples averaged by [`steady_state`] unless configured otherwise.
pub const DEFAULT_WINDOW: usize = 100;

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Mean of the last `window` samples.
pub fn steady_state(curve: &[f64], window: usize) -> Result<f64> {
    if window == 0 || curve.len() <= window {
        return Err(Error::ShortTrace { len: curve.len(), window });
    }
    Ok(curve[curve.len() - window..].iter().sum::<f64>() / window as f64)
}

/// Averages `runs` independent runs pointwise. Run `r` uses
/// `rng::run_seed(base.seed, r)`; runs execute on the rayon pool and are
/// combined in run order.
pub fn monte_carlo(
    scenario: &Scenario,
    base: &RunConfig,
    algorithm: Algorithm,
    runs: usize,
    trace: TraceSpec,
) -> Result<MetricsTrace> {
    if runs == 0 {
        return Err(Error::config("runs", "at least one Monte Carlo run is required"));
    }
    base.validate(&scenario.topology)?;
    let results: Vec<(u64, Result<MetricsTrace>)> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = rng::run_seed(base.seed, r);
            let config = RunConfig { seed, ..base.clone() };
            (seed, run_experiment(scenario, &config, algorithm, trace))
        })
        .collect();

    let mut failed = Vec::new();
    let mut first = None;
    let mut traces = Vec::with_capacity(runs);
    for (seed, result) in results {
        match result {
            Ok(t) => traces.push(t),
            Err(e) => {
                failed.push(seed);
                first.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first {
        return Err(Error::MonteCarlo { seeds: failed, first: Box::new(first) });
    }
    Ok(average(traces))
}

fn average(traces: Vec<MetricsTrace>) -> MetricsTrace {
    let n = traces.len() as f64;
    let mean_curve = |pick: fn(&MetricsTrace) -> &Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; pick(&traces[0]).len()];
        for t in &traces {
            for (a, v) in acc.iter_mut().zip(pick(t)) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a / n).collect()
    };
    let mean_table = |pick: fn(&MetricsTrace) -> &Option<Vec<Vec<f64>>>| -> Option<Vec<Vec<f64>>> {
        let first = pick(&traces[0]).as_ref()?;
        let mut acc: Vec<Vec<f64>> = first.iter().map(|row| vec![0.0; row.len()]).collect();
        for t in &traces {
            for (arow, row) in acc.iter_mut().zip(pick(t).as_ref()?) {
                for (a, v) in arow.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        Some(acc.into_iter().map(|row| row.into_iter().map(|a| a / n).collect()).collect())
    };
    MetricsTrace {
        msd: mean_curve(|t| &t.msd),
        rate: mean_curve(|t| &t.rate),
        agent_sq_error: mean_table(|t| &t.agent_sq_error),
        agent_bits: mean_table(|t| &t.agent_bits),
        feedback_residual: traces.iter().map(|t| t.feedback_residual).fold(0.0, f64::max),
        seeds: traces.iter().flat_map(|t| t.seeds.iter().copied()).collect(),
    }
}

/// One evaluated point of a rate-distortion sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RDPoint {
    pub epsilon: f64,
    pub zeta: f64,
    pub gamma: f64,
    /// Quantizer resolution `μ^{(1+ε)/2}`.
    pub resolution: f64,
    /// Steady-state bits per node per component.
    pub rate: f64,
    pub msd: f64,
    pub msd_db: f64,
    pub on_hull: bool,
    /// Set when the point diverged; rate and distortion are NaN.
    pub error: Option<String>,
}

/// Sweep grid and evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    /// `(ζ, γ)` pairs.
    pub hyperparameters: Vec<(f64, f64)>,
    pub runs: usize,
    pub window: usize,
}

/// `n` values linearly spaced over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// All `(ζ, γ)` pairs from two grids.
pub fn grid_pairs(zetas: &[f64], gammas: &[f64]) -> Vec<(f64, f64)> {
    zetas.iter().flat_map(|&z| gammas.iter().map(move |&g| (z, g))).collect()
}

/// Evaluates every `(ε, ζ, γ)` combination. The base operator's resolution
/// is replaced by `μ^{(1+ε)/2}`; diverged points are kept with their error.
pub fn rd_sweep(
    scenario: &Scenario,
    base: &RunConfig,
    algorithm: Algorithm,
    sweep: &SweepSpec,
) -> Result<Vec<RDPoint>> {
    let mut cells = Vec::new();
    for &(zeta, gamma) in &sweep.hyperparameters {
        for &epsilon in &sweep.epsilons {
            let resolution = base.mu.powf((1.0 + epsilon) / 2.0);
            let operators = base
                .operators
                .iter()
                .map(|op| {
                    op.with_resolution(resolution).ok_or_else(|| {
                        Error::config("operator", "rate-distortion sweeps need a dithered or ANQ quantizer")
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let config = RunConfig { zeta, gamma, operators, ..base.clone() };
            config.validate(&scenario.topology)?;
            cells.push((epsilon, resolution, config));
        }
    }
    let mut points: Vec<RDPoint> = cells
        .par_iter()
        .map(|(epsilon, resolution, config)| {
            let outcome = monte_carlo(scenario, config, algorithm, sweep.runs, TraceSpec::default())
                .and_then(|t| Ok((steady_state(&t.rate, sweep.window)?, steady_state(&t.msd, sweep.window)?)));
            let (rate, msd, error) = match outcome {
                Ok((rate, msd)) => (rate, msd, None),
                Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
            };
            RDPoint {
                epsilon: *epsilon,
                zeta: config.zeta,
                gamma: config.gamma,
                resolution: *resolution,
                rate,
                msd,
                msd_db: to_db(msd),
                on_hull: false,
                error,
            }
        })
        .collect();
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.rate, p.msd_db)).collect();
    for i in lower_convex_hull(&coords) {
        points[i].on_hull = true;
    }
    Ok(points)
}

/// Indices of the points on the lower-left convex hull of `(rate, distortion)`
/// pairs, sorted by rate then distortion. Dominated points are excluded,
/// collinear boundary points are kept, non-finite points are ignored.
pub fn lower_convex_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].0.is_finite() && points[i].1.is_finite())
        .collect();
    order.sort_by(|&a, &b| {
        points[a].0.total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });

    // Pareto front: distortion must strictly improve as rate grows
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        match front.last() {
            Some(&last) if points[i].1 > points[last].1 => {}
            Some(&last) if points[i].1 == points[last].1 && points[i].0 > points[last].0 => {}
            _ => front.push(i),
        }
    }

    let scale = front
        .iter()
        .map(|&i| points[i].0.abs().max(points[i].1.abs()))
        .fold(1.0, f64::max);
    let tol = 1e-12 * scale * scale;
    let mut hull: Vec<usize> = Vec::new();
    for i in front {
        while hull.len() >= 2 {
            let (o, a) = (points[hull[hull.len() - 2]], points[hull[hull.len() - 1]]);
            let b = points[i];
            let cross = (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
            if cross < -tol {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}
