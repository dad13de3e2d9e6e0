//! TOML experiment configuration: parsing, whole-document validation and
//! construction of the simulated problem.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compression::OperatorSpec;
use crate::engine::{Algorithm, RunConfig, Scenario};
use crate::error::{Error, FieldError, Result};
use crate::metrics::{grid_pairs, linspace, SweepSpec, DEFAULT_WINDOW};
use crate::model::{perturbed_group_models, structured_models, uniform_variances, LinearRegressionModel};
use crate::rng::{self, Purpose};
use crate::topology::{
    build_combination_matrix, consensus_basis, group_consensus_basis, CombinationMatrix, CoordinateGroup,
    NetworkTopology, SubspaceBasis,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub mu: Values,
    #[serde(default = "one")]
    pub zeta: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Iterations per run; defaults to `⌈12/(μ·min_k 2σ²_{u,k})⌉`.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Keep every n-th iteration in exported curves.
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    /// Ties the quantizer resolution to the step size: `μ^{(1+ε)/2}`.
    #[serde(default)]
    pub resolution_epsilon: Option<f64>,
    #[serde(default = "default_stability_epsilon")]
    pub stability_epsilon: f64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub basis: BasisSpec,
    pub model: ModelSpec,
    #[serde(default = "OperatorSpec::identity")]
    pub operator: OperatorSpec,
    #[serde(default)]
    pub rd: Option<RdSpec>,
}

fn default_runs() -> usize {
    1
}
fn default_algorithm() -> Algorithm {
    Algorithm::DefAtc
}
fn one() -> f64 {
    1.0
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_thinning() -> usize {
    1
}
fn default_stability_epsilon() -> f64 {
    crate::diagnostics::DEFAULT_EPSILON
}

/// A scalar, an explicit list, or a linear grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    List(Vec<f64>),
    Linspace { start: f64, end: f64, count: usize },
}

impl Values {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Values::One(v) => vec![*v],
            Values::List(v) => v.clone(),
            Values::Linspace { start, end, count } => linspace(*start, *end, *count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Complete { agents: usize, dim: usize },
    Ring { agents: usize, dim: usize },
    Path { agents: usize, dim: usize },
    /// Seeded unit-square geometric graph, redrawn until connected (and
    /// until every basis group is connected).
    RandomGeometric { agents: usize, dim: usize, radius: f64 },
    Edges { agents: usize, dim: usize, edges: Vec<(usize, usize)> },
}

impl TopologySpec {
    pub fn agents(&self) -> usize {
        match self {
            TopologySpec::Complete { agents, .. }
            | TopologySpec::Ring { agents, .. }
            | TopologySpec::Path { agents, .. }
            | TopologySpec::RandomGeometric { agents, .. }
            | TopologySpec::Edges { agents, .. } => *agents,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TopologySpec::Complete { dim, .. }
            | TopologySpec::Ring { dim, .. }
            | TopologySpec::Path { dim, .. }
            | TopologySpec::RandomGeometric { dim, .. }
            | TopologySpec::Edges { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    #[default]
    Consensus,
    Groups { groups: Vec<GroupSpec> },
    /// `U` and `A` read from comma-separated files (one matrix row per line).
    Custom { u_file: PathBuf, combination_file: PathBuf },
}

/// Agents given as a list or as a half-open `[start, end)` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    #[serde(default)]
    pub agents: Option<Vec<usize>>,
    #[serde(default)]
    pub agent_range: Option<(usize, usize)>,
    pub coords: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarianceSpec {
    Constant(f64),
    PerAgent(Vec<f64>),
    /// Seeded i.i.d. draws from `U[lo, hi]`.
    Range { range: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sigma_u_sq: VarianceSpec,
    pub sigma_v_sq: VarianceSpec,
    /// Variance of the per-agent Gaussian perturbation added to the
    /// basis-structured models.
    #[serde(default)]
    pub perturbation_variance: f64,
    /// Explicit per-agent models; overrides the structured draw.
    #[serde(default)]
    pub w_star: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdSpec {
    #[serde(default = "default_rd_epsilons")]
    pub epsilon: Values,
    #[serde(default)]
    pub zeta: Option<Values>,
    #[serde(default)]
    pub gamma: Option<Values>,
    /// Monte Carlo runs per point; defaults to the top-level `runs`.
    #[serde(default)]
    pub runs: Option<usize>,
}

fn default_rd_epsilons() -> Values {
    Values::Linspace { start: 1e-3, end: 1.0, count: 25 }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = parse_config(&text)?;
    if let BasisSpec::Custom { u_file, combination_file } = &mut config.basis {
        let base = path.parent().unwrap_or(Path::new("."));
        for f in [u_file, combination_file] {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Parses a configuration document without touching the file system.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

impl ExperimentConfig {
    pub fn mus(&self) -> Vec<f64> {
        self.mu.to_vec()
    }

    /// Checks every field and then builds the problem once, returning all
    /// problems found.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut push = |path: &str, msg: String| errors.push(FieldError::new(path, msg));

        let mus = self.mus();
        if mus.is_empty() {
            push("mu", "at least one step size is required".into());
        }
        for (i, &mu) in mus.iter().enumerate() {
            if !(mu.is_finite() && mu > 0.0) {
                push(&index_path("mu", i, mus.len()), format!("must be > 0, got {mu}"));
            }
        }
        for (name, v) in [("zeta", self.zeta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v <= 1.0) {
                push(name, format!("must lie in (0, 1], got {v}"));
            }
        }
        if self.runs == 0 {
            push("runs", "must be ≥ 1".into());
        }
        if self.window == 0 {
            push("window", "must be ≥ 1".into());
        }
        if self.thinning == 0 {
            push("thinning", "must be ≥ 1".into());
        }
        if let Some(t) = self.iterations {
            if t <= self.window {
                push("iterations", format!("must exceed the steady-state window ({}), got {t}", self.window));
            }
        }
        if let Some(eps) = self.resolution_epsilon {
            if !(eps > 0.0 && eps <= 1.0) {
                push("resolution_epsilon", format!("must lie in (0, 1], got {eps}"));
            }
            if self.operator.with_resolution(1.0).is_none() {
                push("resolution_epsilon", "operator has no resolution parameter to tie to μ".into());
            }
        }
        if !(self.stability_epsilon > 0.0 && self.stability_epsilon < 1.0) {
            push("stability_epsilon", format!("must lie in (0, 1), got {}", self.stability_epsilon));
        }

        let (agents, dim) = (self.topology.agents(), self.topology.dim());
        if agents == 0 {
            push("topology.agents", "must be ≥ 1".into());
        }
        if dim == 0 {
            push("topology.dim", "must be ≥ 1".into());
        }
        if let TopologySpec::RandomGeometric { radius, .. } = self.topology {
            if !(radius > 0.0 && radius.is_finite()) {
                push("topology.radius", format!("must be > 0, got {radius}"));
            }
        }
        if let TopologySpec::Edges { edges, .. } = &self.topology {
            for (i, &(a, b)) in edges.iter().enumerate() {
                if a >= agents || b >= agents {
                    push(&format!("topology.edges[{i}]"), format!("({a}, {b}) outside 0..{agents}"));
                }
            }
        }

        if let BasisSpec::Groups { groups } = &self.basis {
            for (g, group) in groups.iter().enumerate() {
                match (&group.agents, group.agent_range) {
                    (Some(_), Some(_)) => push(
                        &format!("basis.groups[{g}]"),
                        "give either agents or agent_range, not both".into(),
                    ),
                    (None, None) => push(&format!("basis.groups[{g}]"), "agents or agent_range is required".into()),
                    (None, Some((a, b))) if a >= b => {
                        push(&format!("basis.groups[{g}].agent_range"), format!("empty range [{a}, {b})"))
                    }
                    _ => {}
                }
            }
        }

        for (name, spec, strict) in [
            ("model.sigma_u_sq", &self.model.sigma_u_sq, true),
            ("model.sigma_v_sq", &self.model.sigma_v_sq, false),
        ] {
            let ok = |v: f64| v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            let need = if strict { "> 0" } else { "≥ 0" };
            match spec {
                VarianceSpec::Constant(v) if !ok(*v) => push(name, format!("must be {need}, got {v}")),
                VarianceSpec::PerAgent(vs) => {
                    if vs.len() != agents {
                        push(name, format!("expected {agents} entries, got {}", vs.len()));
                    }
                    for (i, &v) in vs.iter().enumerate() {
                        if !ok(v) {
                            push(&format!("{name}[{i}]"), format!("must be {need}, got {v}"));
                        }
                    }
                }
                VarianceSpec::Range { range: (lo, hi) } => {
                    if !ok(*lo) || !hi.is_finite() || hi < lo {
                        push(&format!("{name}.range"), format!("need {need} lower end and lo ≤ hi, got [{lo}, {hi}]"));
                    }
                }
                _ => {}
            }
        }
        let pv = self.model.perturbation_variance;
        if !(pv.is_finite() && pv >= 0.0) {
            push("model.perturbation_variance", format!("must be ≥ 0, got {pv}"));
        }
        if let Some(ws) = &self.model.w_star {
            if ws.len() != agents {
                push("model.w_star", format!("expected {agents} vectors, got {}", ws.len()));
            }
            for (k, w) in ws.iter().enumerate() {
                if w.len() != dim {
                    push(&format!("model.w_star[{k}]"), format!("expected length {dim}, got {}", w.len()));
                }
            }
        }

        if let Err(Error::Config(e)) = self.operator.validate(dim.max(1)) {
            errors.extend(e);
        }
        if let Some(rd) = &self.rd {
            check_grid(&mut errors, "rd.epsilon", &rd.epsilon, |e| e > 0.0 && e <= 1.0, "(0, 1]");
            for (name, grid) in [("rd.zeta", &rd.zeta), ("rd.gamma", &rd.gamma)] {
                if let Some(grid) = grid {
                    check_grid(&mut errors, name, grid, |v| v > 0.0 && v <= 1.0, "(0, 1]");
                }
            }
            if rd.runs == Some(0) {
                errors.push(FieldError::new("rd.runs", "must be ≥ 1"));
            }
            if self.operator.with_resolution(1.0).is_none() {
                errors.push(FieldError::new("rd", "rate-distortion sweeps need a dithered or ANQ quantizer"));
            }
        }

        if errors.is_empty() {
            match self.build_scenario() {
                Ok(_) => {}
                Err(Error::Config(e)) => errors.extend(e),
                Err(Error::Topology(msg)) => errors.push(FieldError::new("topology", msg)),
                Err(Error::Construction(msg)) => errors.push(FieldError::new("basis", msg)),
                Err(e) => errors.push(FieldError::new("basis", e.to_string())),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    fn groups(&self) -> Option<Vec<CoordinateGroup>> {
        let BasisSpec::Groups { groups } = &self.basis else { return None };
        Some(
            groups
                .iter()
                .map(|g| CoordinateGroup {
                    agents: match (&g.agents, g.agent_range) {
                        (Some(a), _) => a.clone(),
                        (None, Some((a, b))) => (a..b).collect(),
                        (None, None) => Vec::new(),
                    },
                    coords: g.coords.clone(),
                })
                .collect(),
        )
    }

    pub fn build_topology(&self) -> Result<NetworkTopology> {
        let (agents, dim) = (self.topology.agents(), self.topology.dim());
        match &self.topology {
            TopologySpec::Complete { .. } => NetworkTopology::complete(agents, dim),
            TopologySpec::Ring { .. } => NetworkTopology::ring(agents, dim),
            TopologySpec::Path { .. } => NetworkTopology::path(agents, dim),
            TopologySpec::Edges { edges, .. } => NetworkTopology::from_edges(agents, edges, vec![dim; agents]),
            TopologySpec::RandomGeometric { radius, .. } => {
                let groups: Vec<Vec<usize>> = self
                    .groups()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|g| g.agents)
                    .collect();
                NetworkTopology::random_geometric(agents, dim, *radius, self.seed, &groups)
            }
        }
    }

    pub fn build_basis(&self) -> Result<(SubspaceBasis, Option<DMatrix<f64>>)> {
        let (agents, dim) = (self.topology.agents(), self.topology.dim());
        match &self.basis {
            BasisSpec::Consensus => Ok((consensus_basis(agents, dim), None)),
            BasisSpec::Groups { .. } => {
                let basis = group_consensus_basis(agents, dim, &self.groups().unwrap_or_default())
                    .map_err(|e| prefix_paths(e, "basis."))?;
                Ok((basis, None))
            }
            BasisSpec::Custom { u_file, combination_file } => {
                let u = read_matrix(u_file)?;
                let a = read_matrix(combination_file)?;
                Ok((SubspaceBasis::custom(u)?, Some(a)))
            }
        }
    }

    /// Topology, basis, combination matrix, model and ground truth. Seeded
    /// draws depend on `seed` only.
    pub fn build_scenario(&self) -> Result<Scenario> {
        let topology = self.build_topology()?;
        let (basis, dense) = self.build_basis()?;
        let combination = match dense {
            Some(a) => CombinationMatrix::from_dense(&topology, &basis, a)?,
            None => build_combination_matrix(&topology, &basis)?,
        };
        let agents = topology.agents();
        let dims = topology.dims().to_vec();
        let mut rng = rng::stream(self.seed, Purpose::Setup, 1, 0);
        let draw = |spec: &VarianceSpec, rng: &mut rand_chacha::ChaCha8Rng| match spec {
            VarianceSpec::Constant(v) => vec![*v; agents],
            VarianceSpec::PerAgent(v) => v.clone(),
            VarianceSpec::Range { range: (lo, hi) } => uniform_variances(agents, *lo, *hi, rng),
        };
        let sigma_u_sq = draw(&self.model.sigma_u_sq, &mut rng);
        let sigma_v_sq = draw(&self.model.sigma_v_sq, &mut rng);
        let base = match &self.model.w_star {
            Some(ws) => ws.iter().map(|w| DVector::from_vec(w.clone())).collect(),
            None => structured_models(&basis, &dims, &mut rng),
        };
        let w_star = if self.model.perturbation_variance > 0.0 {
            perturbed_group_models(&base, self.model.perturbation_variance, &mut rng)
        } else {
            base
        };
        let model = LinearRegressionModel::new(w_star, sigma_u_sq, sigma_v_sq)?;
        Scenario::new(topology, basis, combination, model)
    }

    /// Operator with its resolution tied to `mu` when configured.
    pub fn operator_for(&self, mu: f64) -> OperatorSpec {
        match self.resolution_epsilon {
            Some(eps) => self
                .operator
                .with_resolution(mu.powf((1.0 + eps) / 2.0))
                .unwrap_or_else(|| self.operator.clone()),
            None => self.operator.clone(),
        }
    }

    pub fn iterations_for(&self, scenario: &Scenario, mu: f64) -> usize {
        self.iterations.unwrap_or_else(|| scenario.default_iterations(mu))
    }

    pub fn run_config(&self, scenario: &Scenario, mu: f64) -> RunConfig {
        RunConfig::uniform(
            scenario.agents(),
            mu,
            self.zeta,
            self.gamma,
            self.iterations_for(scenario, mu),
            self.operator_for(mu),
            self.seed,
        )
    }

    /// Step-parameter conditions for the configured `ζ`, `γ` and the
    /// operator's declared `β²` at the first step size.
    pub fn stability(&self, scenario: &Scenario) -> Result<crate::diagnostics::StabilityReport> {
        let op = self.operator_for(self.mus()[0]);
        let beta_sq_max = scenario
            .topology
            .dims()
            .iter()
            .map(|&m| op.declared_params(m).beta_sq)
            .fold(0.0, f64::max);
        crate::diagnostics::stability_check(
            scenario.combination.matrix(),
            &scenario.basis,
            self.zeta,
            self.gamma,
            beta_sq_max,
            self.stability_epsilon,
        )
    }

    /// Sweep grid; without an `[rd]` table the defaults apply
    /// (25 values of ε, the configured ζ and γ).
    pub fn sweep(&self) -> SweepSpec {
        let rd = self.rd.clone().unwrap_or(RdSpec {
            epsilon: default_rd_epsilons(),
            zeta: None,
            gamma: None,
            runs: None,
        });
        let zetas = rd.zeta.map_or_else(|| vec![self.zeta], |v| v.to_vec());
        let gammas = rd.gamma.map_or_else(|| vec![self.gamma], |v| v.to_vec());
        SweepSpec {
            epsilons: rd.epsilon.to_vec(),
            hyperparameters: grid_pairs(&zetas, &gammas),
            runs: rd.runs.unwrap_or(self.runs),
            window: self.window,
        }
    }
}

fn index_path(name: &str, i: usize, len: usize) -> String {
    if len == 1 {
        name.to_string()
    } else {
        format!("{name}[{i}]")
    }
}

fn check_grid(errors: &mut Vec<FieldError>, name: &str, grid: &Values, ok: impl Fn(f64) -> bool, range: &str) {
    if let Values::Linspace { count: 0, .. } = grid {
        errors.push(FieldError::new(name, "count must be ≥ 1"));
    }
    let values = grid.to_vec();
    if values.is_empty() && !matches!(grid, Values::Linspace { .. }) {
        errors.push(FieldError::new(name, "at least one value is required"));
    }
    if let Some(v) = values.iter().find(|&&v| !ok(v)) {
        errors.push(FieldError::new(name, format!("values must lie in {range}, got {v}")));
    }
}

fn prefix_paths(err: Error, prefix: &str) -> Error {
    match err {
        Error::Config(errors) => Error::Config(
            errors
                .into_iter()
                .map(|e| FieldError::new(format!("{prefix}{}", e.path), e.message))
                .collect(),
        ),
        other => other,
    }
}

/// Dense matrix from a comma- or whitespace-separated text file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{}: rows have different lengths", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
