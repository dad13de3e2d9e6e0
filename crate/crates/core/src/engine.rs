//! Iteration state machines for uncompressed ATC diffusion, DEF-ATC and the
//! DEF-ATC variant without error feedback.
//!
//! All agents advance synchronously. Every phase reads previous-phase values
//! only, so the per-agent loops may run in any order.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::compression::OperatorSpec;
use crate::error::{Error, Result};
use crate::model::{stochastic_gradient, GroundTruth, LinearRegressionModel};
use crate::rng::{self, Purpose};
use crate::topology::{CombinationMatrix, NetworkTopology, SubspaceBasis};

/// Any state component above this magnitude aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Atc,
    DefAtc,
    DefAtcNoEf,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Atc => "atc",
            Algorithm::DefAtc => "def-atc",
            Algorithm::DefAtcNoEf => "def-atc-no-ef",
        }
    }
}

/// Everything about a problem instance that is fixed across Monte Carlo runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: NetworkTopology,
    pub basis: SubspaceBasis,
    pub combination: CombinationMatrix,
    pub model: LinearRegressionModel,
    pub truth: GroundTruth,
}

impl Scenario {
    pub fn new(
        topology: NetworkTopology,
        basis: SubspaceBasis,
        combination: CombinationMatrix,
        model: LinearRegressionModel,
    ) -> Result<Self> {
        if model.dims() != topology.dims() {
            return Err(Error::Input(format!(
                "model dimensions {:?} do not match topology {:?}",
                model.dims(),
                topology.dims()
            )));
        }
        let m = topology.total_dim();
        if combination.matrix().nrows() != m || basis.matrix().nrows() != m {
            return Err(Error::Input(format!(
                "combination matrix is {}×{}, basis has {} rows, network stacks {m}",
                combination.matrix().nrows(),
                combination.matrix().ncols(),
                basis.matrix().nrows()
            )));
        }
        let truth = model.constrained_optimum(&basis)?;
        Ok(Self { topology, basis, combination, model, truth })
    }

    pub fn agents(&self) -> usize {
        self.topology.agents()
    }

    /// Default horizon `⌈12/(μ·min_k 2σ²_{u,k})⌉`.
    pub fn default_iterations(&self, mu: f64) -> usize {
        (12.0 / (mu * self.model.min_curvature())).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mu: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub iterations: usize,
    /// One operator per agent.
    pub operators: Vec<OperatorSpec>,
    pub seed: u64,
}

impl RunConfig {
    /// Same operator at every agent.
    pub fn uniform(
        agents: usize,
        mu: f64,
        zeta: f64,
        gamma: f64,
        iterations: usize,
        operator: OperatorSpec,
        seed: u64,
    ) -> Self {
        Self { mu, zeta, gamma, iterations, operators: vec![operator; agents], seed }
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.mu.is_finite() && self.mu > 0.0) {
            errors.push(crate::FieldError::new("mu", format!("must be > 0, got {}", self.mu)));
        }
        for (name, v) in [("zeta", self.zeta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v <= 1.0) {
                errors.push(crate::FieldError::new(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        if self.operators.len() != topology.agents() {
            errors.push(crate::FieldError::new(
                "operator",
                format!("{} operators for {} agents", self.operators.len(), topology.agents()),
            ));
        } else {
            for (k, op) in self.operators.iter().enumerate() {
                if let Err(Error::Config(e)) = op.validate(topology.dim(k)) {
                    errors.extend(e);
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// Per-agent memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub w: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi_self: DVector<f64>,
    /// This agent's copies of `φ_ℓ` for every neighbor `ℓ ≠ k`.
    pub phi_neighbors: Vec<(usize, DVector<f64>)>,
    pub z: DVector<f64>,
}

impl AgentState {
    fn zeros(k: usize, topology: &NetworkTopology) -> Self {
        let n = topology.dim(k);
        Self {
            w: DVector::zeros(n),
            psi: DVector::zeros(n),
            phi_self: DVector::zeros(n),
            phi_neighbors: topology
                .neighbors(k)
                .iter()
                .filter(|&&l| l != k)
                .map(|&l| (l, DVector::zeros(topology.dim(l))))
                .collect(),
            z: DVector::zeros(n),
        }
    }

    fn phi_of(&self, k: usize, l: usize) -> &DVector<f64> {
        if l == k {
            &self.phi_self
        } else {
            let pos = self
                .phi_neighbors
                .binary_search_by_key(&l, |(idx, _)| *idx)
                .expect("combination block outside neighborhood");
            &self.phi_neighbors[pos].1
        }
    }
}

/// Outcome of one synchronous iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Bits sent by each agent.
    pub bits: Vec<f64>,
    /// `max_k ‖χ_k − δ_k − z_k‖_∞` (always 0 for ATC and the no-feedback variant).
    pub feedback_residual: f64,
}

/// A single run in progress.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    config: &'a RunConfig,
    algorithm: Algorithm,
    states: Vec<AgentState>,
    iteration: u64,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, config: &'a RunConfig, algorithm: Algorithm) -> Result<Self> {
        config.validate(&scenario.topology)?;
        let states = (0..scenario.agents())
            .map(|k| AgentState::zeros(k, &scenario.topology))
            .collect();
        Ok(Self { scenario, config, algorithm, states, iteration: 0 })
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Stacked current estimates.
    pub fn stacked_w(&self) -> DVector<f64> {
        crate::model::stack(&self.states.iter().map(|s| s.w.clone()).collect::<Vec<_>>())
    }

    /// `(1/K) Σ ‖w°_k − w_k‖²`.
    pub fn msd(&self) -> f64 {
        let truth = &self.scenario.truth;
        self.states
            .iter()
            .enumerate()
            .map(|(k, s)| (truth.agent(k) - &s.w).norm_squared())
            .sum::<f64>()
            / self.states.len() as f64
    }

    pub fn agent_sq_errors(&self) -> Vec<f64> {
        let truth = &self.scenario.truth;
        self.states
            .iter()
            .enumerate()
            .map(|(k, s)| (truth.agent(k) - &s.w).norm_squared())
            .collect()
    }

    /// Copies of `φ_ℓ` held by different agents agree exactly.
    pub fn broadcast_consistent(&self) -> bool {
        self.states.iter().all(|s| {
            s.phi_neighbors
                .iter()
                .all(|(l, copy)| *copy == self.states[*l].phi_self)
        })
    }

    fn gradient(&self, k: usize, i: u64) -> DVector<f64> {
        let mut data = rng::stream(self.config.seed, Purpose::Data, k, i);
        let (u, d) = self.scenario.model.sample(k, &mut data);
        stochastic_gradient(&self.states[k].w, &u, d)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        self.iteration += 1;
        let report = match self.algorithm {
            Algorithm::Atc => self.atc_step(),
            Algorithm::DefAtc => self.def_atc_step(true)?,
            Algorithm::DefAtcNoEf => self.def_atc_step(false)?,
        };
        self.check_divergence()?;
        Ok(report)
    }

    fn atc_step(&mut self) -> StepReport {
        let i = self.iteration;
        let mu = self.config.mu;
        let psi: Vec<DVector<f64>> = (0..self.states.len())
            .map(|k| &self.states[k].w - self.gradient(k, i) * mu)
            .collect();
        let combination = &self.scenario.combination;
        let mut bits = Vec::with_capacity(self.states.len());
        for (k, state) in self.states.iter_mut().enumerate() {
            let mut w = DVector::zeros(state.w.len());
            for (l, block) in combination.blocks(k) {
                w.gemv(1.0, block, &psi[*l], 1.0);
            }
            state.w = w;
            bits.push(state.w.len() as f64 * f64::from(self.config.operators[k].high_precision_bits));
        }
        for (state, p) in self.states.iter_mut().zip(psi) {
            state.psi = p;
        }
        StepReport { bits, feedback_residual: 0.0 }
    }

    fn def_atc_step(&mut self, feedback: bool) -> Result<StepReport> {
        let i = self.iteration;
        let k_total = self.states.len();
        let (mu, zeta, gamma) = (self.config.mu, self.config.zeta, self.config.gamma);

        // adapt and compress, reading previous-iteration state only
        let mut deltas = Vec::with_capacity(k_total);
        let mut bits = Vec::with_capacity(k_total);
        let mut residual = 0.0f64;
        for k in 0..k_total {
            let grad = self.gradient(k, i);
            let state = &mut self.states[k];
            state.psi = &state.w - grad * (mu / zeta);
            let mut chi = &state.psi - &state.phi_self;
            if feedback {
                chi += &state.z;
            }
            let mut comp = rng::stream(self.config.seed, Purpose::Compression, k, i);
            let msg = self.config.operators[k]
                .compress(chi.as_slice(), &mut comp)
                .map_err(|e| match e {
                    Error::Input(_) => Error::Divergence {
                        iteration: i as usize,
                        agent: k,
                        magnitude: chi.amax(),
                    },
                    other => other,
                })?;
            let delta = DVector::from_vec(msg.values);
            if feedback {
                state.z = &chi - &delta;
                residual = residual.max((&chi - &delta - &state.z).amax());
            }
            bits.push(msg.bits);
            deltas.push(delta);
        }

        // every holder of a copy of φ_ℓ applies the same broadcast increment
        for (k, state) in self.states.iter_mut().enumerate() {
            state.phi_self.axpy(zeta, &deltas[k], 1.0);
            for (l, copy) in &mut state.phi_neighbors {
                copy.axpy(zeta, &deltas[*l], 1.0);
            }
        }

        let combination = &self.scenario.combination;
        for (k, state) in self.states.iter_mut().enumerate() {
            let mut mixed = DVector::zeros(state.w.len());
            for (l, block) in combination.blocks(k) {
                mixed.gemv(1.0, block, state.phi_of(k, *l), 1.0);
            }
            state.w = &state.phi_self * (1.0 - gamma) + mixed * gamma;
        }
        Ok(StepReport { bits, feedback_residual: residual })
    }

    fn check_divergence(&self) -> Result<()> {
        for (k, s) in self.states.iter().enumerate() {
            for v in [&s.w, &s.phi_self, &s.z] {
                let magnitude = v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });
                if !(magnitude <= DIVERGENCE_THRESHOLD) {
                    return Err(Error::Divergence {
                        iteration: self.iteration as usize,
                        agent: k,
                        magnitude,
                    });
                }
            }
        }
        Ok(())
    }
}

/// What to keep beyond the network curves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceSpec {
    pub record_agents: bool,
}

/// Per-iteration network curves of one run (or an average of runs).
///
/// Index `i` holds iteration `i`; index 0 is the zero initialization, for
/// which no bits are sent and `rate[0] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTrace {
    pub msd: Vec<f64>,
    pub rate: Vec<f64>,
    /// `agent_sq_error[i][k] = ‖w°_k − w_{k,i}‖²`, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_sq_error: Option<Vec<Vec<f64>>>,
    /// `agent_bits[i][k] = r_{k,i}`, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_bits: Option<Vec<Vec<f64>>>,
    /// Largest error-feedback bookkeeping residual seen.
    pub feedback_residual: f64,
    /// Run seeds that contributed, in run order.
    pub seeds: Vec<u64>,
}

impl MetricsTrace {
    pub fn len(&self) -> usize {
        self.msd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msd.is_empty()
    }
}

/// `R = (1/K) Σ_k r_k / M_k`.
pub fn network_rate(bits: &[f64], dims: &[usize]) -> f64 {
    bits.iter().zip(dims).map(|(b, &m)| b / m as f64).sum::<f64>() / bits.len() as f64
}

/// Runs `config.iterations` synchronous iterations from the zero state.
pub fn run_experiment(
    scenario: &Scenario,
    config: &RunConfig,
    algorithm: Algorithm,
    trace: TraceSpec,
) -> Result<MetricsTrace> {
    let mut sim = Simulation::new(scenario, config, algorithm)?;
    let dims = scenario.topology.dims();
    let t = config.iterations;
    let mut msd = Vec::with_capacity(t + 1);
    let mut rate = Vec::with_capacity(t + 1);
    let mut agent_err = trace.record_agents.then(|| Vec::with_capacity(t + 1));
    let mut agent_bits = trace.record_agents.then(|| Vec::with_capacity(t + 1));
    let mut residual = 0.0f64;

    msd.push(sim.msd());
    rate.push(0.0);
    if let (Some(e), Some(b)) = (&mut agent_err, &mut agent_bits) {
        e.push(sim.agent_sq_errors());
        b.push(vec![0.0; dims.len()]);
    }
    for _ in 0..t {
        let step = sim.step()?;
        residual = residual.max(step.feedback_residual);
        msd.push(sim.msd());
        rate.push(network_rate(&step.bits, dims));
        if let (Some(e), Some(b)) = (&mut agent_err, &mut agent_bits) {
            e.push(sim.agent_sq_errors());
            b.push(step.bits);
        }
    }
    Ok(MetricsTrace {
        msd,
        rate,
        agent_sq_error: agent_err,
        agent_bits,
        feedback_residual: residual,
        seeds: vec![config.seed],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::OperatorKind;
    use crate::topology::{build_combination_matrix, consensus_basis};
    use approx::assert_abs_diff_eq;

    fn scenario(agents: usize, dim: usize, sigma_v_sq: f64) -> Scenario {
        let topology = NetworkTopology::ring(agents, dim).unwrap();
        let basis = consensus_basis(agents, dim);
        let combination = build_combination_matrix(&topology, &basis).unwrap();
        let w: Vec<DVector<f64>> = (0..agents)
            .map(|k| DVector::from_fn(dim, |j, _| ((k + 2 * j) as f64 * 0.37).sin()))
            .collect();
        let su = (0..agents).map(|k| 0.8 + 0.05 * k as f64).collect();
        let model = LinearRegressionModel::new(w, su, vec![sigma_v_sq; agents]).unwrap();
        Scenario::new(topology, basis, combination, model).unwrap()
    }

    #[test]
    fn reduction_to_atc() {
        let sc = scenario(5, 3, 0.3);
        let cfg = RunConfig::uniform(5, 0.01, 1.0, 1.0, 300, OperatorSpec::identity(), 9);
        let mut atc = Simulation::new(&sc, &cfg, Algorithm::Atc).unwrap();
        let mut def = Simulation::new(&sc, &cfg, Algorithm::DefAtc).unwrap();
        for _ in 0..300 {
            let a = atc.step().unwrap();
            let d = def.step().unwrap();
            assert_eq!(a.bits, d.bits);
            assert!((atc.stacked_w() - def.stacked_w()).amax() < 1e-12);
            assert!(def.states().iter().all(|s| s.z.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn msd_at_zero_iterations() {
        let sc = scenario(4, 2, 0.1);
        let cfg = RunConfig::uniform(4, 0.01, 0.9, 0.9, 0, OperatorSpec::identity(), 1);
        let trace = run_experiment(&sc, &cfg, Algorithm::DefAtc, TraceSpec::default()).unwrap();
        assert_eq!(trace.len(), 1);
        assert_abs_diff_eq!(trace.msd[0], sc.truth.stacked().norm_squared() / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_fixed_point_without_noise() {
        let topology = NetworkTopology::ring(4, 2).unwrap();
        let basis = consensus_basis(4, 2);
        let combination = build_combination_matrix(&topology, &basis).unwrap();
        let w_opt = DVector::from_vec(vec![0.6, -0.8]);
        let model = LinearRegressionModel::new(vec![w_opt.clone(); 4], vec![0.9, 1.0, 1.1, 1.2], vec![0.0; 4]).unwrap();
        let sc = Scenario::new(topology, basis, combination, model).unwrap();
        let cfg = RunConfig::uniform(4, 0.05, 0.7, 0.6, 0, OperatorSpec::identity(), 1);
        let mut sim = Simulation::new(&sc, &cfg, Algorithm::DefAtc).unwrap();
        for s in &mut sim.states {
            s.w = w_opt.clone();
            s.phi_self = w_opt.clone();
            for (_, copy) in &mut s.phi_neighbors {
                *copy = w_opt.clone();
            }
        }
        for _ in 0..100 {
            sim.step().unwrap();
            assert!((sim.stacked_w() - sc.truth.stacked()).amax() < 1e-14);
        }
    }

    #[test]
    fn single_agent_scalar_recursion() {
        let topology = NetworkTopology::complete(1, 1).unwrap();
        let basis = consensus_basis(1, 1);
        let combination = build_combination_matrix(&topology, &basis).unwrap();
        let model = LinearRegressionModel::new(vec![DVector::from_element(1, 0.0)], vec![1.0], vec![0.0]).unwrap();
        let sc = Scenario::new(topology, basis, combination, model).unwrap();
        let cfg = RunConfig::uniform(1, 0.01, 1.0, 1.0, 50, OperatorSpec::identity(), 3);
        let mut sim = Simulation::new(&sc, &cfg, Algorithm::DefAtc).unwrap();
        sim.states[0].w[0] = 1.0;
        sim.states[0].phi_self[0] = 1.0;
        // w*=0 and v=0: w_i = (1 − 2μ u_i²) w_{i−1}; the mean contracts like (1 − 2μσ²)
        let mut expected = 1.0;
        for i in 1..=50u64 {
            let mut data = rng::stream(3, Purpose::Data, 0, i);
            let (u, _) = sc.model.sample(0, &mut data);
            expected *= 1.0 - 2.0 * 0.01 * u[0] * u[0];
            sim.step().unwrap();
            assert_abs_diff_eq!(sim.states()[0].w[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_traces() {
        let sc = scenario(5, 3, 0.3);
        let op = OperatorSpec::top_c(2, OperatorKind::DitheredUniform { step: 0.01 });
        let cfg = RunConfig::uniform(5, 0.01, 0.9, 0.9, 200, op, 4);
        let a = run_experiment(&sc, &cfg, Algorithm::DefAtc, TraceSpec { record_agents: true }).unwrap();
        let b = run_experiment(&sc, &cfg, Algorithm::DefAtc, TraceSpec { record_agents: true }).unwrap();
        assert_eq!(a, b);
        let bits: Vec<u64> = a.msd.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, b.msd.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn bookkeeping_and_broadcast() {
        let sc = scenario(6, 4, 0.3);
        let op = OperatorSpec::top_c(2, OperatorKind::Anq { omega: 0.5, eta: 0.01 });
        let cfg = RunConfig::uniform(6, 0.01, 0.8, 0.7, 0, op, 11);
        let mut sim = Simulation::new(&sc, &cfg, Algorithm::DefAtc).unwrap();
        for _ in 0..200 {
            let r = sim.step().unwrap();
            assert_eq!(r.feedback_residual, 0.0);
            assert!(sim.broadcast_consistent());
        }
    }

    #[test]
    fn no_feedback_departs_after_first_drop() {
        let sc = scenario(4, 5, 0.3);
        let op = OperatorSpec::from(OperatorKind::TopCSparsifier { c: 2 });
        let cfg = RunConfig::uniform(4, 0.01, 0.9, 0.9, 0, op, 2);
        let mut ef = Simulation::new(&sc, &cfg, Algorithm::DefAtc).unwrap();
        let mut no_ef = Simulation::new(&sc, &cfg, Algorithm::DefAtcNoEf).unwrap();
        // identical until a discarded coordinate feeds back through z
        ef.step().unwrap();
        no_ef.step().unwrap();
        assert_eq!(ef.stacked_w(), no_ef.stacked_w());
        assert!(ef.states().iter().any(|s| s.z.amax() > 0.0));
        ef.step().unwrap();
        no_ef.step().unwrap();
        assert_ne!(ef.stacked_w(), no_ef.stacked_w());
        assert!(no_ef.states().iter().all(|s| s.z.amax() == 0.0));
    }

    #[test]
    fn identity_no_feedback_matches_def_atc() {
        let sc = scenario(4, 3, 0.3);
        let cfg = RunConfig::uniform(4, 0.02, 0.6, 0.8, 100, OperatorSpec::identity(), 5);
        let a = run_experiment(&sc, &cfg, Algorithm::DefAtc, TraceSpec::default()).unwrap();
        let b = run_experiment(&sc, &cfg, Algorithm::DefAtcNoEf, TraceSpec::default()).unwrap();
        assert_eq!(a.msd, b.msd);
    }

    #[test]
    fn atc_on_complete_graph_averages() {
        let topology = NetworkTopology::complete(3, 2).unwrap();
        let basis = consensus_basis(3, 2);
        let combination = build_combination_matrix(&topology, &basis).unwrap();
        let w = vec![DVector::from_vec(vec![1.0, 0.0]); 3];
        let model = LinearRegressionModel::new(w, vec![1.0, 1.2, 0.9], vec![0.2; 3]).unwrap();
        let sc = Scenario::new(topology, basis, combination, model).unwrap();
        let cfg = RunConfig::uniform(3, 0.05, 1.0, 1.0, 0, OperatorSpec::identity(), 8);
        let mut sim = Simulation::new(&sc, &cfg, Algorithm::Atc).unwrap();
        for _ in 0..5 {
            sim.step().unwrap();
            let mean = sim.states().iter().map(|s| s.psi.clone()).sum::<DVector<f64>>() / 3.0;
            for s in sim.states() {
                assert!((&s.w - &mean).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn noise_free_atc_contracts() {
        let sc = scenario(5, 2, 0.0);
        let cfg = RunConfig::uniform(5, 0.02, 1.0, 1.0, 400, OperatorSpec::identity(), 6);
        let trace = run_experiment(&sc, &cfg, Algorithm::Atc, TraceSpec::default()).unwrap();
        assert!(trace.msd[400] < 1e-3 * trace.msd[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let sc = scenario(4, 3, 0.3);
        let cfg = RunConfig::uniform(4, 5.0, 1.0, 1.0, 500, OperatorSpec::identity(), 1);
        let err = run_experiment(&sc, &cfg, Algorithm::Atc, TraceSpec::default()).unwrap_err();
        let Error::Divergence { iteration, magnitude, .. } = err else { panic!("{err}") };
        assert!(iteration >= 1);
        assert!(!(magnitude <= DIVERGENCE_THRESHOLD));
    }

    #[test]
    fn rate_is_average_bits_per_component() {
        let sc = scenario(3, 4, 0.1);
        let cfg = RunConfig::uniform(3, 0.01, 1.0, 1.0, 5, OperatorSpec::identity(), 1);
        let trace = run_experiment(&sc, &cfg, Algorithm::Atc, TraceSpec { record_agents: true }).unwrap();
        assert_eq!(trace.rate[0], 0.0);
        assert!(trace.rate[1..].iter().all(|&r| r == 32.0));
        let bits = trace.agent_bits.unwrap();
        for (i, row) in bits.iter().enumerate().skip(1) {
            assert_abs_diff_eq!(network_rate(row, &[4, 4, 4]), trace.rate[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn invalid_run_config() {
        let sc = scenario(3, 2, 0.1);
        let cfg = RunConfig::uniform(3, 0.0, 0.0, 1.5, 5, OperatorSpec::identity(), 1);
        let Err(Error::Config(errors)) = Simulation::new(&sc, &cfg, Algorithm::DefAtc) else { panic!() };
        let paths: Vec<_> = errors.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, vec!["mu", "zeta", "gamma"]);
    }
}
