//! Numerical stability conditions for a concrete configuration and
//! empirical audits of compression-operator distortion bounds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::compression::{top_c_indices, DistortionParams, OperatorSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::topology::{eigenvalues, is_symmetric, spectral_radius_gap, SubspaceBasis, SUBSPACE_TOL};

/// Eigenvector matrices worse conditioned than this make the report advisory.
pub const CONDITION_LIMIT: f64 = 1e10;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `ρ(A − UUᵀ)`.
    pub rho_gap: f64,
    /// Spectral radius of `A` restricted to the complement of `Range(U)`.
    pub rho_j: f64,
    /// `max |1 − λ|` over the same eigenvalues.
    pub rho_i_minus_j: f64,
    /// `‖V⁻¹‖`.
    pub v1: f64,
    /// `‖V‖`.
    pub v2: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub beta_sq_max: f64,
    pub lhs27: f64,
    /// `None` when unbounded (no relative compression noise).
    pub rhs27: Option<f64>,
    pub satisfied27: bool,
    pub lhs28: f64,
    pub satisfied28: bool,
    pub symmetric: bool,
    pub eigenvector_condition: f64,
    pub advisory: bool,
    pub warning: Option<String>,
}

impl StabilityReport {
    pub fn satisfied(&self) -> bool {
        self.satisfied27 && self.satisfied28
    }
}

/// Evaluates the two step-parameter conditions on `γζ` with the eigenvector
/// norms of `A` on the complement of `Range(U)`.
pub fn stability_check(
    a: &DMatrix<f64>,
    basis: &SubspaceBasis,
    zeta: f64,
    gamma: f64,
    beta_sq_max: f64,
    epsilon: f64,
) -> Result<StabilityReport> {
    let u = basis.matrix();
    if a.nrows() != a.ncols() || a.nrows() != u.nrows() {
        return Err(Error::Input(format!(
            "A is {}×{} but U has {} rows",
            a.nrows(),
            a.ncols(),
            u.nrows()
        )));
    }
    let au = (a * u - u).amax();
    let ua = (u.transpose() * a - u.transpose()).amax();
    if au > SUBSPACE_TOL || ua > SUBSPACE_TOL {
        return Err(Error::Input(format!("A does not fix Range(U) (‖AU−U‖ = {au:e}, ‖UᵀA−Uᵀ‖ = {ua:e})")));
    }

    let q = complement(basis);
    let b = q.transpose() * a * &q;
    let symmetric = is_symmetric(a);
    let lambdas = eigenvalues(&b);
    let rho_j = lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rho_i_minus_j = lambdas.iter().map(|z| (Complex64::new(1.0, 0.0) - z).norm()).fold(0.0, f64::max);

    let (v1, v2, condition, mut warning) = if symmetric || b.nrows() == 0 {
        (1.0, 1.0, 1.0, None)
    } else {
        let w = eigenvectors(&b, &lambdas);
        let sv = w.svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let warn = (cond > CONDITION_LIMIT)
            .then(|| format!("eigenvector matrix is ill-conditioned (cond ≈ {cond:e}); A may be defective"));
        // v1 = ‖V⁻¹‖, v2 = ‖V‖
        ((1.0 / smin).max(1.0), smax.max(1.0), cond, warn)
    };

    let r = rho_j + epsilon;
    let s = rho_i_minus_j + epsilon;
    let vv = v1 * v1 * v2 * v2;
    let lhs27 = gamma * zeta;
    let (rhs27, satisfied27, lhs28, satisfied28) = if beta_sq_max == 0.0 {
        // no relative noise: both conditions are vacuous
        let lhs28 = if r < 1.0 { lhs27 * s * s / (1.0 - r) } else { f64::INFINITY };
        (None, true, lhs28, true)
    } else if r >= 1.0 {
        warning.get_or_insert_with(|| format!("ρ(J) + ε = {r} ≥ 1"));
        (Some(f64::NEG_INFINITY), false, f64::INFINITY, false)
    } else {
        let rhs27 = (1.0 - r) / (4.0 * vv * beta_sq_max * s * s);
        let mix = (1.0 + gamma) - gamma * r;
        let lhs28 = lhs27 * s * s / (1.0 - r) + zeta * zeta * beta_sq_max * vv * (1.0 + mix * mix);
        (Some(rhs27), lhs27 > 0.0 && lhs27 < rhs27, lhs28, lhs28 < 0.5)
    };

    Ok(StabilityReport {
        rho_gap: spectral_radius_gap(a, basis),
        rho_j,
        rho_i_minus_j,
        v1,
        v2,
        epsilon,
        zeta,
        gamma,
        beta_sq_max,
        lhs27,
        rhs27,
        satisfied27,
        lhs28,
        satisfied28,
        symmetric,
        eigenvector_condition: condition,
        advisory: !symmetric || condition > CONDITION_LIMIT,
        warning,
    })
}

/// Orthonormal basis of the orthogonal complement of `Range(U)`.
fn complement(basis: &SubspaceBasis) -> DMatrix<f64> {
    let u = basis.matrix();
    let m = u.nrows();
    let perp = DMatrix::<f64>::identity(m, m) - u * u.transpose();
    let eig = perp.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..m)
        .filter(|&j| eig.eigenvalues[j] > 0.5)
        .map(|j| eig.eigenvectors.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Unit-norm eigenvectors by shifted inverse iteration. Clusters of equal
/// eigenvalues are handled with orthogonalized subspace iteration.
fn eigenvectors(b: &DMatrix<f64>, lambdas: &[Complex64]) -> DMatrix<Complex64> {
    let n = b.nrows();
    let bc = b.map(|x| Complex64::new(x, 0.0));
    let scale = b.amax().max(1.0);
    let cluster_tol = 1e-8 * scale;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| {
        lambdas[i].re.total_cmp(&lambdas[j].re).then(lambdas[i].im.total_cmp(&lambdas[j].im))
    });
    let mut columns: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    let mut rng = rng::stream(0, Purpose::Setup, 0, 0);
    let mut start = 0;
    while start < order.len() {
        let lead = lambdas[order[start]];
        let mut end = start + 1;
        while end < order.len() && (lambdas[order[end]] - lead).norm() <= cluster_tol {
            end += 1;
        }
        let size = end - start;
        let shift = lead + Complex64::new(1e-10 * scale, 0.0);
        let lu = (&bc - DMatrix::<Complex64>::identity(n, n) * shift).lu();
        let mut block: Vec<DVector<Complex64>> = (0..size)
            .map(|_| DVector::from_fn(n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
            .collect();
        for _ in 0..3 {
            for v in block.iter_mut() {
                if let Some(x) = lu.solve(v) {
                    *v = x;
                }
            }
            orthonormalize(&mut block);
        }
        columns.extend(block);
        start = end;
    }
    DMatrix::from_columns(&columns)
}

fn orthonormalize(vs: &mut [DVector<Complex64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let proj = vs[j].dotc(&vs[i]);
            let prev = vs[j].clone();
            vs[i].axpy(-proj, &prev, Complex64::new(1.0, 0.0));
        }
        let norm = vs[i].norm();
        if norm > 0.0 {
            vs[i].unscale_mut(norm);
        }
    }
}

/// Empirical distortion of one operator on one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCase {
    pub norm_sq: f64,
    pub empirical_mse: f64,
    pub std_error: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// Largest per-component `|mean error| / standard error`, for operators
    /// declared unbiased.
    pub max_bias_z: Option<f64>,
    pub unbiased_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionAudit {
    pub operator: OperatorSpec,
    pub params: DistortionParams,
    pub trials: usize,
    pub cases: Vec<AuditCase>,
    pub passed: bool,
}

/// Standard errors allowed above the declared bound and around zero bias.
pub const AUDIT_SIGMAS: f64 = 5.0;

/// Compares `E‖x − C(x)‖²` against `β²‖x‖² + σ²` for each input, and checks
/// `E[C(x)] = x` componentwise when the operator is declared unbiased.
pub fn distortion_audit(
    spec: &OperatorSpec,
    inputs: &[Vec<f64>],
    trials: usize,
    seed: u64,
) -> Result<DistortionAudit> {
    if trials < 1000 {
        return Err(Error::config("trials", format!("need at least 1000 trials, got {trials}")));
    }
    let len = inputs.first().map_or(0, Vec::len);
    if inputs.iter().any(|x| x.len() != len) {
        return Err(Error::Input("audit inputs must share one length".into()));
    }
    spec.validate(len)?;
    let params = spec.declared_params(len);
    let mut cases = Vec::with_capacity(inputs.len());
    for (case, x) in inputs.iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Compression, case, 0);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut err_sum = vec![0.0; len];
        let mut err_sq = vec![0.0; len];
        for _ in 0..trials {
            let y = spec.compress(x, &mut rng)?.values;
            let mut e2 = 0.0;
            for j in 0..len {
                let e = y[j] - x[j];
                e2 += e * e;
                err_sum[j] += e;
                err_sq[j] += e * e;
            }
            sum += e2;
            sum_sq += e2 * e2;
        }
        let n = trials as f64;
        let mse = sum / n;
        let std_error = ((sum_sq / n - mse * mse).max(0.0) / n).sqrt();
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        let bound = params.bound(norm_sq);
        let tol = 1e-12 * norm_sq.max(1e-300);
        let within_bound = mse <= bound + AUDIT_SIGMAS * std_error + tol;
        let (max_bias_z, unbiased_ok) = if params.unbiased {
            let mut worst = 0.0f64;
            let mut ok = true;
            for j in 0..len {
                let mean = err_sum[j] / n;
                // A rarely-moving component can show zero sample variance
                // in n draws. Under unbiasedness Var(e_j) ≤ E‖e‖², so the
                // whole-vector MSE is a valid floor.
                let var = (err_sq[j] / n - mean * mean).max(mse);
                let se = (var / n).sqrt();
                let slack = 1e-12 * x[j].abs().max(1e-300);
                if mean.abs() > AUDIT_SIGMAS * se + slack {
                    ok = false;
                }
                if se > 0.0 {
                    worst = worst.max(mean.abs() / se);
                }
            }
            (Some(worst), ok)
        } else {
            (None, true)
        };
        cases.push(AuditCase { norm_sq, empirical_mse: mse, std_error, bound, within_bound, max_bias_z, unbiased_ok });
    }
    let passed = cases.iter().all(|c| c.within_bound && c.unbiased_ok);
    Ok(DistortionAudit { operator: spec.clone(), params, trials, cases, passed })
}

/// `count` Gaussian directions of length `len` whose norms are spread
/// log-uniformly over `decades` decades starting at `smallest`.
pub fn audit_inputs(len: usize, count: usize, smallest: f64, decades: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, Purpose::Setup, 0, 0);
    (0..count)
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let target = smallest * 10f64.powf(decades * frac);
            let g = crate::model::unit_norm_vector(len, &mut rng);
            g.iter().map(|v| v * target).collect()
        })
        .collect()
}

/// Kept-energy inequality of top-c selection:
/// `Σ_{j ∈ top-c} x_j² ≥ (c/L)‖x‖²`.
pub fn top_c_energy_holds(x: &[f64], c: usize) -> bool {
    let total: f64 = x.iter().map(|v| v * v).sum();
    let kept: f64 = top_c_indices(x, c).iter().map(|&j| x[j] * x[j]).sum();
    kept >= (c as f64 / x.len() as f64) * total * (1.0 - 1e-12)
}
