//! Streaming linear-regression data, stochastic gradients and the
//! closed-form constrained optimum used as MSD ground truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::topology::{BasisStructure, SubspaceBasis};

/// `d_k(i) = u_{k,i}ᵀ w*_k + v_k(i)` with `u ~ N(0, σ²_{u,k} I)` and
/// `v ~ N(0, σ²_{v,k})`, independent over agents and time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressionModel {
    w_star: Vec<DVector<f64>>,
    sigma_u_sq: Vec<f64>,
    sigma_v_sq: Vec<f64>,
}

impl LinearRegressionModel {
    pub fn new(w_star: Vec<DVector<f64>>, sigma_u_sq: Vec<f64>, sigma_v_sq: Vec<f64>) -> Result<Self> {
        let k = w_star.len();
        if k == 0 {
            return Err(Error::config("model", "at least one agent is required"));
        }
        let mut errors = Vec::new();
        if sigma_u_sq.len() != k {
            errors.push(crate::FieldError::new(
                "model.sigma_u_sq",
                format!("expected {k} entries, got {}", sigma_u_sq.len()),
            ));
        }
        if sigma_v_sq.len() != k {
            errors.push(crate::FieldError::new(
                "model.sigma_v_sq",
                format!("expected {k} entries, got {}", sigma_v_sq.len()),
            ));
        }
        for (name, values, strict) in [("sigma_u_sq", &sigma_u_sq, true), ("sigma_v_sq", &sigma_v_sq, false)] {
            for (i, &v) in values.iter().enumerate() {
                let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
                if !ok {
                    errors.push(crate::FieldError::new(
                        format!("model.{name}[{i}]"),
                        format!("must be {} 0, got {v}", if strict { ">" } else { "≥" }),
                    ));
                }
            }
        }
        if let Some(i) = w_star.iter().position(|w| w.iter().any(|x| !x.is_finite())) {
            errors.push(crate::FieldError::new(format!("model.w_star[{i}]"), "non-finite entry"));
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(Self { w_star, sigma_u_sq, sigma_v_sq })
    }

    pub fn agents(&self) -> usize {
        self.w_star.len()
    }

    pub fn dim(&self, k: usize) -> usize {
        self.w_star[k].len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.w_star.iter().map(DVector::len).collect()
    }

    pub fn w_star(&self, k: usize) -> &DVector<f64> {
        &self.w_star[k]
    }

    pub fn sigma_u_sq(&self) -> &[f64] {
        &self.sigma_u_sq
    }

    pub fn sigma_v_sq(&self) -> &[f64] {
        &self.sigma_v_sq
    }

    /// Smallest Hessian eigenvalue over agents, `min_k 2σ²_{u,k}`.
    pub fn min_curvature(&self) -> f64 {
        self.sigma_u_sq.iter().fold(f64::INFINITY, |m, &s| m.min(2.0 * s))
    }

    pub fn stacked_w_star(&self) -> DVector<f64> {
        stack(&self.w_star)
    }

    /// Draws one regressor/response pair for agent `k`.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> (DVector<f64>, f64) {
        let su = self.sigma_u_sq[k].sqrt();
        let u = DVector::from_fn(self.dim(k), |_, _| su * rng.sample::<f64, _>(StandardNormal));
        let v = self.sigma_v_sq[k].sqrt() * rng.sample::<f64, _>(StandardNormal);
        let d = u.dot(&self.w_star[k]) + v;
        (u, d)
    }

    /// Exact gradient of `J_k(w) = E|d − uᵀw|²`, i.e. `2σ²_{u,k}(w − w*_k)`.
    pub fn gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        (w - &self.w_star[k]) * (2.0 * self.sigma_u_sq[k])
    }

    /// Minimizer of `Σ_k J_k(w_k)` over `W ∈ Range(U)`:
    /// `W° = U(UᵀDU)⁻¹UᵀD W*`, `D = diag(σ²_{u,k} I_{M_k})`.
    pub fn constrained_optimum(&self, basis: &SubspaceBasis) -> Result<GroundTruth> {
        let u = basis.matrix();
        let dims = self.dims();
        let m: usize = dims.iter().sum();
        if u.nrows() != m {
            return Err(Error::Input(format!("basis has {} rows, model stacks {m} entries", u.nrows())));
        }
        let d = DVector::from_iterator(
            m,
            dims.iter().zip(&self.sigma_u_sq).flat_map(|(&n, &s)| std::iter::repeat_n(s, n)),
        );
        let du = DMatrix::from_fn(m, u.ncols(), |i, j| d[i] * u[(i, j)]);
        let gram = u.transpose() * &du;
        let rhs = du.transpose() * self.stacked_w_star();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Input("UᵀDU is not positive definite".into()))?;
        let w = u * chol.solve(&rhs);
        Ok(GroundTruth::new(w, &dims))
    }
}

/// Stacked constrained optimum and its per-agent slices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    stacked: DVector<f64>,
    agents: Vec<DVector<f64>>,
}

impl GroundTruth {
    pub fn new(stacked: DVector<f64>, dims: &[usize]) -> Self {
        let mut offset = 0;
        let agents = dims
            .iter()
            .map(|&n| {
                let s = stacked.rows(offset, n).into_owned();
                offset += n;
                s
            })
            .collect();
        Self { stacked, agents }
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn agent(&self, k: usize) -> &DVector<f64> {
        &self.agents[k]
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }
}

/// `2u(uᵀw − d)`.
pub fn stochastic_gradient(w: &DVector<f64>, u: &DVector<f64>, d: f64) -> DVector<f64> {
    u * (2.0 * (u.dot(w) - d))
}

pub(crate) fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(DVector::len).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Gaussian vector normalized to unit norm.
pub fn unit_norm_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 0.0 {
            return g / n;
        }
    }
}

/// Models `w•_k` that share components exactly as the basis dictates.
///
/// Consensus: one unit-norm vector for every agent. Group blocks: one
/// standard Gaussian value per (group, coordinate). Custom: `U x` with
/// `x ~ N(0, I)`.
pub fn structured_models<R: Rng + ?Sized>(basis: &SubspaceBasis, dims: &[usize], rng: &mut R) -> Vec<DVector<f64>> {
    match basis.structure() {
        BasisStructure::Consensus { agents, dim } => {
            let w = unit_norm_vector(*dim, rng);
            vec![w; *agents]
        }
        BasisStructure::GroupBlocks { agents, dim, groups } => {
            let mut models = vec![DVector::zeros(*dim); *agents];
            for group in groups {
                for &j in &group.coords {
                    let value: f64 = rng.sample(StandardNormal);
                    for &k in &group.agents {
                        models[k][j] = value;
                    }
                }
            }
            models
        }
        BasisStructure::Custom => {
            let u = basis.matrix();
            let x = DVector::from_fn(u.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            GroundTruth::new(u * x, dims).agents
        }
    }
}

/// `w*_k = w•_k + Δ_k` with i.i.d. `N(0, variance)` entries in `Δ_k`.
pub fn perturbed_group_models<R: Rng + ?Sized>(
    base: &[DVector<f64>],
    variance: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let sd = variance.sqrt();
    base.iter()
        .map(|w| w.map(|x| x + sd * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// `agents` i.i.d. draws from `U[lo, hi]`.
pub fn uniform_variances<R: Rng + ?Sized>(agents: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..agents)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{consensus_basis, group_consensus_basis, CoordinateGroup};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn scalar_model(w: &[f64], su: &[f64]) -> LinearRegressionModel {
        LinearRegressionModel::new(
            w.iter().map(|&x| DVector::from_element(1, x)).collect(),
            su.to_vec(),
            vec![0.0; w.len()],
        )
        .unwrap()
    }

    #[test]
    fn noiseless_zero_model_gives_zero_response() {
        let model = LinearRegressionModel::new(vec![DVector::zeros(4)], vec![1.3], vec![0.0]).unwrap();
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(model.sample(0, &mut r).1, 0.0);
        }
    }

    #[test]
    fn response_variance_and_cross_moment() {
        let w = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let model = LinearRegressionModel::new(vec![w.clone()], vec![0.7], vec![0.3]).unwrap();
        let mut r = rng();
        let n = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut cross = DVector::zeros(3);
        for _ in 0..n {
            let (u, d) = model.sample(0, &mut r);
            sum += d;
            sum_sq += d * d;
            cross += u * d;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected = 0.7 * w.norm_squared() + 0.3;
        assert!((var / expected - 1.0).abs() < 0.03, "var {var} vs {expected}");
        cross /= n as f64;
        // Var(u_j d) ≈ σ²_u E[d²] + σ⁴_u w_j², so the standard error is small
        for j in 0..3 {
            let se = ((0.7 * expected + 0.49 * w[j] * w[j]) / n as f64).sqrt();
            assert!((cross[j] - 0.7 * w[j]).abs() < 5.0 * se, "j = {j}");
        }
    }

    #[test]
    fn gradient_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(stochastic_gradient(&e1, &e1, 0.0), DVector::from_vec(vec![2.0, 0.0]));
        let w = DVector::from_vec(vec![0.3, -0.2]);
        let u = DVector::from_vec(vec![1.5, 0.7]);
        assert_eq!(stochastic_gradient(&w, &u, u.dot(&w)), DVector::zeros(2));
    }

    #[test]
    fn gradient_is_unbiased() {
        let w_star = DVector::from_vec(vec![1.0, -0.5]);
        let model = LinearRegressionModel::new(vec![w_star], vec![0.9], vec![0.4]).unwrap();
        let w = DVector::from_vec(vec![0.2, 0.3]);
        let mut r = rng();
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sum_sq = DVector::zeros(2);
        for _ in 0..n {
            let (u, d) = model.sample(0, &mut r);
            let g = stochastic_gradient(&w, &u, d);
            sum_sq += g.component_mul(&g);
            sum += g;
        }
        let mean = &sum / n as f64;
        let truth = model.gradient(0, &w);
        for j in 0..2 {
            let var = sum_sq[j] / n as f64 - mean[j] * mean[j];
            let se = (var / n as f64).sqrt();
            assert!((mean[j] - truth[j]).abs() < 3.0 * se, "j = {j}: {} vs {}", mean[j], truth[j]);
        }
    }

    #[test]
    fn gradient_noise_grows_at_most_quadratically() {
        let model = LinearRegressionModel::new(vec![DVector::from_vec(vec![1.0, 2.0])], vec![1.0], vec![0.5]).unwrap();
        let w0 = model.w_star(0).clone();
        let dir = DVector::from_vec(vec![0.6, 0.8]);
        let mut r = rng();
        let second_moment = |w: &DVector<f64>, r: &mut ChaCha8Rng| {
            let truth = model.gradient(0, w);
            (0..20_000)
                .map(|_| {
                    let (u, d) = model.sample(0, r);
                    (stochastic_gradient(w, &u, d) - &truth).norm_squared()
                })
                .sum::<f64>()
                / 20_000.0
        };
        let base = second_moment(&w0, &mut r);
        assert!(base.is_finite());
        let mut ratios = Vec::new();
        for radius in [10.0, 100.0, 1000.0] {
            let w = &w0 + &dir * radius;
            ratios.push(second_moment(&w, &mut r) / (radius * radius));
        }
        // E‖s‖² = 4σ⁴(M+1)‖w − w*‖² + 4σ²σ²_v M: the ratio settles near 12
        for ratio in ratios {
            assert!(ratio < 14.0, "ratio {ratio}");
        }
    }

    #[test]
    fn consensus_optimum_examples() {
        let basis = consensus_basis(2, 1);
        let truth = scalar_model(&[1.0, 3.0], &[1.0, 1.0]).constrained_optimum(&basis).unwrap();
        assert_abs_diff_eq!(truth.agent(0)[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(truth.agent(1)[0], 2.0, epsilon = 1e-12);
        let truth = scalar_model(&[1.0, 3.0], &[1.0, 3.0]).constrained_optimum(&basis).unwrap();
        assert_abs_diff_eq!(truth.agent(0)[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(truth.agent(1)[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn feasible_optimum_is_returned_unchanged() {
        let basis = consensus_basis(4, 3);
        let w = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let model = LinearRegressionModel::new(vec![w; 4], vec![0.8, 0.9, 1.1, 1.2], vec![0.1; 4]).unwrap();
        let truth = model.constrained_optimum(&basis).unwrap();
        assert!((truth.stacked() - model.stacked_w_star()).norm() < 1e-12);
    }

    fn multitask_groups() -> Vec<CoordinateGroup> {
        let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
        vec![
            CoordinateGroup { agents: range(0, 6), coords: range(0, 2) },
            CoordinateGroup { agents: range(0, 3), coords: vec![2] },
            CoordinateGroup { agents: range(3, 6), coords: vec![2] },
            CoordinateGroup { agents: range(0, 2), coords: vec![3] },
            CoordinateGroup { agents: range(2, 6), coords: vec![3] },
        ]
    }

    #[test]
    fn group_optimum_invariants() {
        let basis = group_consensus_basis(6, 4, &multitask_groups()).unwrap();
        let mut r = rng();
        let base = structured_models(&basis, &[4; 6], &mut r);
        let w_star = perturbed_group_models(&base, 0.1, &mut r);
        let su = uniform_variances(6, 0.5, 1.5, &mut r);
        let model = LinearRegressionModel::new(w_star, su, vec![0.2; 6]).unwrap();
        let truth = model.constrained_optimum(&basis).unwrap();
        let w = truth.stacked();
        assert!((w - basis.project(w)).norm() < 1e-10);
        let grad = crate::model::stack(&(0..6).map(|k| model.gradient(k, truth.agent(k))).collect::<Vec<_>>());
        assert!((basis.matrix().transpose() * &grad).norm() < 1e-8);
        // projected gradient step leaves the optimum fixed
        let step = w - &grad * 1e-3;
        assert!((w - basis.project(&step)).norm() < 1e-8);
    }

    #[test]
    fn structured_models_share_components() {
        let basis = group_consensus_basis(6, 4, &multitask_groups()).unwrap();
        let models = structured_models(&basis, &[4; 6], &mut rng());
        for k in 1..6 {
            assert_eq!(models[k].rows(0, 2), models[0].rows(0, 2));
        }
        assert_eq!(models[1][2], models[2][2]);
        assert_eq!(models[3][2], models[5][2]);
        assert_eq!(models[0][3], models[1][3]);
        assert_ne!(models[0][2], models[3][2]);

        let consensus = structured_models(&consensus_basis(3, 5), &[5; 3], &mut rng());
        assert_abs_diff_eq!(consensus[0].norm(), 1.0, epsilon = 1e-14);
        assert_eq!(consensus[0], consensus[2]);
    }

    #[test]
    fn perturbation_statistics() {
        let base = vec![DVector::from_element(10, 0.7); 30];
        let same = perturbed_group_models(&base, 0.0, &mut rng());
        assert_eq!(same, base);
        let mut r = rng();
        let mut deltas = Vec::new();
        for _ in 0..40 {
            for (p, b) in perturbed_group_models(&base, 0.1, &mut r).iter().zip(&base) {
                deltas.extend((p - b).iter().copied());
            }
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.1 - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn invalid_variances_reported_together() {
        let err = LinearRegressionModel::new(
            vec![DVector::zeros(2); 2],
            vec![0.0, 1.0],
            vec![-1.0],
        )
        .unwrap_err();
        let Error::Config(errors) = err else { panic!() };
        let paths: Vec<_> = errors.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"model.sigma_v_sq"));
        assert!(paths.contains(&"model.sigma_u_sq[0]"));
        assert!(paths.contains(&"model.sigma_v_sq[0]"));
    }
}
