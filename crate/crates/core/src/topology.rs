//! Network graphs, subspace bases and combination matrices.
//!
//! A combination matrix `A` acts on the stacked network vector
//! `W = col{w_1, ..., w_K}` and must satisfy `AU = U`, `UᵀA = Uᵀ` and
//! `ρ(A − UUᵀ) < 1` for the subspace basis `U`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Tolerance for `AU = U`, `UᵀA = Uᵀ` and semi-unitarity of `U`.
pub const SUBSPACE_TOL: f64 = 1e-10;
/// `ρ(A − UUᵀ)` must not exceed `1 − SPECTRAL_MARGIN`.
pub const SPECTRAL_MARGIN: f64 = 1e-8;

/// Undirected graph with self-loops plus per-agent parameter lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl NetworkTopology {
    /// Builds a topology from an undirected edge list. Self-loops are implied
    /// and duplicate edges are ignored.
    pub fn from_edges(agents: usize, edges: &[(usize, usize)], dims: Vec<usize>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::Topology("network needs at least one agent".into()));
        }
        let mut adjacency = vec![vec![false; agents]; agents];
        for (k, row) in adjacency.iter_mut().enumerate() {
            row[k] = true;
        }
        for &(a, b) in edges {
            if a >= agents || b >= agents {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) references an agent outside 0..{agents}"
                )));
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        Self::from_adjacency(adjacency, dims)
    }

    pub fn from_adjacency(adjacency: Vec<Vec<bool>>, dims: Vec<usize>) -> Result<Self> {
        let k = adjacency.len();
        if k == 0 {
            return Err(Error::Topology("network needs at least one agent".into()));
        }
        if dims.len() != k {
            return Err(Error::Topology(format!(
                "{} parameter lengths given for {k} agents",
                dims.len()
            )));
        }
        if dims.iter().any(|&m| m == 0) {
            return Err(Error::Topology("parameter lengths must be positive".into()));
        }
        for (a, row) in adjacency.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Topology(format!("adjacency row {a} has length {}", row.len())));
            }
            if !row[a] {
                return Err(Error::Topology(format!("agent {a} is missing its self-loop")));
            }
            for b in 0..k {
                if row[b] != adjacency[b][a] {
                    return Err(Error::Topology(format!("adjacency not symmetric at ({a}, {b})")));
                }
            }
        }
        let neighbors = adjacency
            .iter()
            .map(|row| (0..k).filter(|&b| row[b]).collect())
            .collect();
        let mut offsets = Vec::with_capacity(k + 1);
        let mut acc = 0;
        offsets.push(0);
        for &m in &dims {
            acc += m;
            offsets.push(acc);
        }
        let topo = Self {
            adjacency,
            neighbors,
            dims,
            offsets,
        };
        let all: Vec<usize> = (0..k).collect();
        if !topo.is_connected_subset(&all) {
            return Err(Error::Topology("graph is not connected".into()));
        }
        Ok(topo)
    }

    pub fn complete(agents: usize, dim: usize) -> Result<Self> {
        let edges: Vec<_> = (0..agents)
            .flat_map(|a| (a + 1..agents).map(move |b| (a, b)))
            .collect();
        Self::from_edges(agents, &edges, vec![dim; agents])
    }

    pub fn ring(agents: usize, dim: usize) -> Result<Self> {
        let edges: Vec<_> = if agents < 2 {
            Vec::new()
        } else {
            (0..agents).map(|a| (a, (a + 1) % agents)).collect()
        };
        Self::from_edges(agents, &edges, vec![dim; agents])
    }

    pub fn path(agents: usize, dim: usize) -> Result<Self> {
        let edges: Vec<_> = (1..agents).map(|a| (a - 1, a)).collect();
        Self::from_edges(agents, &edges, vec![dim; agents])
    }

    /// Seeded random geometric graph on the unit square: agents closer than
    /// `radius` are linked. Agents are labelled left to right, so contiguous
    /// index ranges are spatially contiguous strips.
    ///
    /// Samples are redrawn until the graph is connected and every subset in
    /// `connected_groups` induces a connected subgraph.
    pub fn random_geometric(
        agents: usize,
        dim: usize,
        radius: f64,
        seed: u64,
        connected_groups: &[Vec<usize>],
    ) -> Result<Self> {
        const MAX_ATTEMPTS: u64 = 10_000;
        if !(radius > 0.0) {
            return Err(Error::Topology("radius must be positive".into()));
        }
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = rng::stream(seed, Purpose::Setup, 0, attempt);
            let mut points: Vec<(f64, f64)> = (0..agents)
                .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut adjacency = vec![vec![false; agents]; agents];
            for a in 0..agents {
                for b in 0..agents {
                    let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
                    adjacency[a][b] = a == b || (dx * dx + dy * dy).sqrt() <= radius;
                }
            }
            if let Ok(topo) = Self::from_adjacency(adjacency, vec![dim; agents]) {
                if connected_groups.iter().all(|g| topo.is_connected_subset(g)) {
                    return Ok(topo);
                }
            }
        }
        Err(Error::Topology(format!(
            "no connected random geometric graph with radius {radius} after {MAX_ATTEMPTS} draws"
        )))
    }

    pub fn agents(&self) -> usize {
        self.adjacency.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Length of the stacked network vector.
    pub fn total_dim(&self) -> usize {
        self.offsets[self.agents()]
    }

    /// Offset of agent `k`'s block inside the stacked network vector.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn is_linked(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// Neighborhood of `k`, including `k`, in increasing order.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// Number of agents in the neighborhood of `k`, including `k`.
    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let k = self.agents();
        (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
            .filter(|&(a, b)| self.adjacency[a][b])
            .collect()
    }

    /// Whether the subgraph induced by `subset` is connected. Empty subsets
    /// are reported as disconnected.
    pub fn is_connected_subset(&self, subset: &[usize]) -> bool {
        let Some(&start) = subset.first() else {
            return false;
        };
        let k = self.agents();
        let mut member = vec![false; k];
        for &a in subset {
            if a >= k {
                return false;
            }
            member[a] = true;
        }
        let mut seen = vec![false; k];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(a) = queue.pop_front() {
            for &b in &self.neighbors[a] {
                if member[b] && !seen[b] {
                    seen[b] = true;
                    count += 1;
                    queue.push_back(b);
                }
            }
        }
        let distinct = member.iter().filter(|&&m| m).count();
        count == distinct
    }
}

/// Metropolis weights `a_kℓ = 1 / max(n_k, n_ℓ)` for linked `k ≠ ℓ`, where
/// `n_k` counts the neighborhood of `k` including `k`; the diagonal absorbs
/// the remainder so rows sum to one.
pub fn metropolis_matrix(topology: &NetworkTopology) -> DMatrix<f64> {
    let all: Vec<usize> = (0..topology.agents()).collect();
    metropolis_on_subset(topology, &all)
}

/// Metropolis weights of the subgraph induced by `subset`, indexed by
/// position in `subset`.
pub fn metropolis_on_subset(topology: &NetworkTopology, subset: &[usize]) -> DMatrix<f64> {
    let n = subset.len();
    let degree: Vec<usize> = subset
        .iter()
        .map(|&a| subset.iter().filter(|&&b| topology.is_linked(a, b)).count())
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && topology.is_linked(subset[i], subset[j]) {
                a[(i, j)] = 1.0 / degree[i].max(degree[j]) as f64;
            }
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    a
}

/// Agents and coordinates tied together by one partial-consensus constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateGroup {
    pub agents: Vec<usize>,
    pub coords: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisStructure {
    Consensus { agents: usize, dim: usize },
    GroupBlocks { agents: usize, dim: usize, groups: Vec<CoordinateGroup> },
    Custom,
}

/// Semi-unitary `M × P` basis of the constraint subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    u: DMatrix<f64>,
    structure: BasisStructure,
}

impl SubspaceBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn structure(&self) -> &BasisStructure {
        &self.structure
    }

    /// Accepts an arbitrary basis after checking `UᵀU = I` and `P ≤ M`.
    pub fn custom(u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(Error::Topology(format!(
                "basis must be M×P with 1 ≤ P ≤ M, got {}×{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let basis = Self {
            u,
            structure: BasisStructure::Custom,
        };
        let dev = basis.orthonormality_defect();
        if dev > SUBSPACE_TOL {
            return Err(Error::Topology(format!(
                "basis is not semi-unitary: max |UᵀU − I| = {dev:e}"
            )));
        }
        Ok(basis)
    }

    /// `max |UᵀU − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.u.transpose() * &self.u;
        let p = gram.nrows();
        (gram - DMatrix::<f64>::identity(p, p)).amax()
    }

    /// Orthogonal projector `UUᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }

    /// Orthogonal projection of a stacked vector onto `Range(U)`.
    pub fn project(&self, w: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.u * (self.u.transpose() * w)
    }
}

/// `U = (1/√K)(1_K ⊗ I_{M_c})`.
pub fn consensus_basis(agents: usize, dim: usize) -> SubspaceBasis {
    let scale = 1.0 / (agents as f64).sqrt();
    let mut u = DMatrix::zeros(agents * dim, dim);
    for k in 0..agents {
        for j in 0..dim {
            u[(k * dim + j, j)] = scale;
        }
    }
    SubspaceBasis {
        u,
        structure: BasisStructure::Consensus { agents, dim },
    }
}

/// One normalized indicator column per (group, coordinate) pair. For every
/// coordinate the groups covering it must partition the agents.
pub fn group_consensus_basis(
    agents: usize,
    dim: usize,
    groups: &[CoordinateGroup],
) -> Result<SubspaceBasis> {
    let mut errors = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        if group.agents.is_empty() {
            errors.push(crate::error::FieldError::new(format!("groups[{g}].agents"), "empty group"));
        }
        if let Some(&a) = group.agents.iter().find(|&&a| a >= agents) {
            errors.push(crate::error::FieldError::new(
                format!("groups[{g}].agents"),
                format!("agent {a} outside 0..{agents}"),
            ));
        }
        if let Some(&j) = group.coords.iter().find(|&&j| j >= dim) {
            errors.push(crate::error::FieldError::new(
                format!("groups[{g}].coords"),
                format!("coordinate {j} outside 0..{dim}"),
            ));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    for j in 0..dim {
        let mut cover = vec![0usize; agents];
        for group in groups.iter().filter(|g| g.coords.contains(&j)) {
            for &a in &group.agents {
                cover[a] += 1;
            }
        }
        if let Some(a) = cover.iter().position(|&c| c != 1) {
            let what = if cover[a] == 0 { "not covered" } else { "covered more than once" };
            errors.push(crate::error::FieldError::new(
                format!("groups (coordinate {j})"),
                format!("agent {a} is {what}; groups must partition the agents for every coordinate"),
            ));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let columns: usize = groups.iter().map(|g| g.coords.len()).sum();
    let mut u = DMatrix::zeros(agents * dim, columns);
    let mut col = 0;
    for group in groups {
        let scale = 1.0 / (group.agents.len() as f64).sqrt();
        for &j in &group.coords {
            for &a in &group.agents {
                u[(a * dim + j, col)] = scale;
            }
            col += 1;
        }
    }
    Ok(SubspaceBasis {
        u,
        structure: BasisStructure::GroupBlocks {
            agents,
            dim,
            groups: groups.to_vec(),
        },
    })
}

/// Block combination matrix together with per-agent neighbor blocks.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    a: DMatrix<f64>,
    // blocks[k] = [(ℓ, A_kℓ)] for ℓ in N_k
    blocks: Vec<Vec<(usize, DMatrix<f64>)>>,
}

impl CombinationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Non-zero-pattern blocks `A_kℓ` for `ℓ ∈ N_k`.
    pub fn blocks(&self, k: usize) -> &[(usize, DMatrix<f64>)] {
        &self.blocks[k]
    }

    /// Wraps a user-supplied matrix after validating it against the topology
    /// and basis. Nothing is constructed.
    pub fn from_dense(
        topology: &NetworkTopology,
        basis: &SubspaceBasis,
        a: DMatrix<f64>,
    ) -> Result<Self> {
        let m = topology.total_dim();
        if a.nrows() != m || a.ncols() != m || basis.matrix().nrows() != m {
            return Err(Error::Construction(format!(
                "dimension mismatch: A is {}×{}, U has {} rows, network dimension {m}",
                a.nrows(),
                a.ncols(),
                basis.matrix().nrows()
            )));
        }
        for k in 0..topology.agents() {
            for l in 0..topology.agents() {
                if topology.is_linked(k, l) {
                    continue;
                }
                let block = a.view(
                    (topology.offset(k), topology.offset(l)),
                    (topology.dim(k), topology.dim(l)),
                );
                if block.amax() != 0.0 {
                    return Err(Error::Construction(format!(
                        "block ({k}, {l}) is non-zero but the agents are not linked"
                    )));
                }
            }
        }
        let blocks = (0..topology.agents())
            .map(|k| {
                topology
                    .neighbors(k)
                    .iter()
                    .map(|&l| {
                        let view = a.view(
                            (topology.offset(k), topology.offset(l)),
                            (topology.dim(k), topology.dim(l)),
                        );
                        (l, view.into_owned())
                    })
                    .collect()
            })
            .collect();
        let comb = Self { a, blocks };
        comb.validate(basis)?;
        Ok(comb)
    }

    /// Checks all three subspace conditions.
    pub fn validate(&self, basis: &SubspaceBasis) -> Result<SubspaceCheck> {
        let check = SubspaceCheck::evaluate(&self.a, basis);
        if check.passes() {
            Ok(check)
        } else {
            Err(Error::Construction(format!(
                "subspace conditions violated: |AU−U| = {:e}, |UᵀA−Uᵀ| = {:e}, ρ(A−UUᵀ) = {}",
                check.right_defect, check.left_defect, check.spectral_radius
            )))
        }
    }
}

/// Evaluated subspace conditions for a combination matrix.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SubspaceCheck {
    /// `max |AU − U|`
    pub right_defect: f64,
    /// `max |UᵀA − Uᵀ|`
    pub left_defect: f64,
    /// `ρ(A − UUᵀ)`
    pub spectral_radius: f64,
}

impl SubspaceCheck {
    pub fn evaluate(a: &DMatrix<f64>, basis: &SubspaceBasis) -> Self {
        let u = basis.matrix();
        Self {
            right_defect: (a * u - u).amax(),
            left_defect: (u.transpose() * a - u.transpose()).amax(),
            spectral_radius: spectral_radius_gap(a, basis),
        }
    }

    pub fn passes(&self) -> bool {
        self.right_defect <= SUBSPACE_TOL
            && self.left_defect <= SUBSPACE_TOL
            && self.spectral_radius <= 1.0 - SPECTRAL_MARGIN
    }
}

/// Assembles `A` for consensus or group-block bases from Metropolis weights.
///
/// Consensus: `A = A_metropolis ⊗ I_{M_c}`. Group blocks: coordinate `j` of
/// every agent is mixed by the Metropolis weights of the induced subgraph of
/// whichever group covers `(agent, j)`.
pub fn build_combination_matrix(
    topology: &NetworkTopology,
    basis: &SubspaceBasis,
) -> Result<CombinationMatrix> {
    let m = topology.total_dim();
    let a = match basis.structure() {
        BasisStructure::Consensus { agents, dim } => {
            check_uniform(topology, *agents, *dim)?;
            let base = metropolis_matrix(topology);
            base.kronecker(&DMatrix::<f64>::identity(*dim, *dim))
        }
        BasisStructure::GroupBlocks { agents, dim, groups } => {
            check_uniform(topology, *agents, *dim)?;
            let mut a = DMatrix::zeros(m, m);
            for (g, group) in groups.iter().enumerate() {
                if !topology.is_connected_subset(&group.agents) {
                    return Err(Error::Topology(format!(
                        "group {g} ({:?}) does not induce a connected subgraph",
                        group.agents
                    )));
                }
                let weights = metropolis_on_subset(topology, &group.agents);
                for &j in &group.coords {
                    for (p, &k) in group.agents.iter().enumerate() {
                        for (q, &l) in group.agents.iter().enumerate() {
                            a[(k * dim + j, l * dim + j)] = weights[(p, q)];
                        }
                    }
                }
            }
            a
        }
        BasisStructure::Custom => {
            return Err(Error::Construction(
                "custom bases require a user-supplied combination matrix".into(),
            ))
        }
    };
    CombinationMatrix::from_dense(topology, basis, a)
}

fn check_uniform(topology: &NetworkTopology, agents: usize, dim: usize) -> Result<()> {
    if topology.agents() != agents || topology.dims().iter().any(|&m| m != dim) {
        return Err(Error::Construction(format!(
            "basis expects {agents} agents of dimension {dim}, topology has {} agents with dims {:?}",
            topology.agents(),
            topology.dims()
        )));
    }
    Ok(())
}

/// `ρ(A − UUᵀ)` from the full eigenvalue spectrum.
pub fn spectral_radius_gap(a: &DMatrix<f64>, basis: &SubspaceBasis) -> f64 {
    let diff = a - basis.projector();
    spectral_radius(&diff)
}

/// Spectral radius of a square matrix. Symmetric inputs take the symmetric
/// eigensolver; anything else goes through the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    if is_symmetric(m) {
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigenvalues()
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect()
    } else {
        m.clone().complex_eigenvalues().iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn metropolis_path_graph() {
        let topo = NetworkTopology::path(3, 1).unwrap();
        let a = metropolis_matrix(&topo);
        // n = [2, 3, 2] including self
        let third = 1.0 / 3.0;
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[2.0 * third, third, 0.0, third, third, third, 0.0, third, 2.0 * third],
        );
        assert_abs_diff_eq!(a, expected, epsilon = 1e-15);
    }

    #[test]
    fn metropolis_single_node() {
        let topo = NetworkTopology::from_edges(1, &[], vec![2]).unwrap();
        assert_eq!(metropolis_matrix(&topo), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn metropolis_complete_three() {
        let topo = NetworkTopology::complete(3, 1).unwrap();
        let a = metropolis_matrix(&topo);
        assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let basis = consensus_basis(3, 1);
        assert!(spectral_radius_gap(&a, &basis) < 1e-12);
    }

    #[test]
    fn metropolis_two_nodes_is_primitive() {
        let topo = NetworkTopology::path(2, 1).unwrap();
        let a = metropolis_matrix(&topo);
        assert!(a.iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let err = NetworkTopology::from_edges(4, &[(0, 1), (2, 3)], vec![1; 4]).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let adj = vec![vec![true, true], vec![false, true]];
        assert!(NetworkTopology::from_adjacency(adj, vec![1, 1]).is_err());
    }

    #[test]
    fn consensus_basis_small() {
        let u = consensus_basis(4, 1);
        assert!(u.matrix().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let single = consensus_basis(1, 3);
        assert_eq!(single.matrix(), &DMatrix::<f64>::identity(3, 3));
        let big = consensus_basis(30, 10);
        assert_eq!(big.matrix().shape(), (300, 10));
        assert!(big.orthonormality_defect() <= 1e-12);
    }

    #[test]
    fn group_basis_degenerates_to_consensus() {
        let groups = [CoordinateGroup {
            agents: (0..5).collect(),
            coords: (0..3).collect(),
        }];
        let g = group_consensus_basis(5, 3, &groups).unwrap();
        assert_abs_diff_eq!(g.matrix(), consensus_basis(5, 3).matrix(), epsilon = 1e-15);
    }

    #[test]
    fn group_basis_shared_and_private() {
        let groups = [
            CoordinateGroup { agents: vec![0, 1], coords: vec![0] },
            CoordinateGroup { agents: vec![0], coords: vec![1] },
            CoordinateGroup { agents: vec![1], coords: vec![1] },
        ];
        let g = group_consensus_basis(2, 2, &groups).unwrap();
        assert_eq!(g.matrix().ncols(), 3);
        assert!(g.orthonormality_defect() <= 1e-12);
    }

    #[test]
    fn group_basis_rejects_overlap_with_coordinate() {
        let groups = [
            CoordinateGroup { agents: vec![0, 1], coords: vec![0, 1] },
            CoordinateGroup { agents: vec![1], coords: vec![1] },
        ];
        match group_consensus_basis(2, 2, &groups).unwrap_err() {
            Error::Config(errs) => {
                assert_eq!(errs.len(), 1);
                assert!(errs[0].path.contains("coordinate 1"), "{}", errs[0]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn group_basis_rejects_gap() {
        let groups = [CoordinateGroup { agents: vec![0], coords: vec![0] }];
        assert!(group_consensus_basis(2, 1, &groups).is_err());
    }

    #[test]
    fn consensus_combination_complete_graph() {
        let topo = NetworkTopology::complete(3, 2).unwrap();
        let basis = consensus_basis(3, 2);
        let comb = build_combination_matrix(&topo, &basis).unwrap();
        let check = comb.validate(&basis).unwrap();
        assert!(check.spectral_radius < 1e-12);
    }

    #[test]
    fn spectral_gap_edge_cases() {
        let basis = consensus_basis(3, 1);
        assert!(spectral_radius_gap(&basis.projector(), &basis) < 1e-12);
        let identity = DMatrix::<f64>::identity(3, 3);
        let rho = spectral_radius_gap(&identity, &basis);
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
        assert!(!SubspaceCheck::evaluate(&identity, &basis).passes());
    }

    #[test]
    fn nonsymmetric_spectrum() {
        // rotation-like block has complex eigenvalues of modulus 0.5
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&m), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn unlinked_nonzero_block_rejected() {
        let topo = NetworkTopology::path(3, 1).unwrap();
        let basis = consensus_basis(3, 1);
        let a = DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert!(CombinationMatrix::from_dense(&topo, &basis, a).is_err());
    }

    #[test]
    fn group_structure_needs_connected_groups() {
        let topo = NetworkTopology::path(3, 1).unwrap();
        let groups = [
            CoordinateGroup { agents: vec![0, 2], coords: vec![0] },
            CoordinateGroup { agents: vec![1], coords: vec![0] },
        ];
        let basis = group_consensus_basis(3, 1, &groups).unwrap();
        assert!(matches!(
            build_combination_matrix(&topo, &basis),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn random_geometric_is_deterministic_and_connected() {
        let a = NetworkTopology::random_geometric(20, 2, 0.35, 9, &[]).unwrap();
        let b = NetworkTopology::random_geometric(20, 2, 0.35, 9, &[]).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected_subset(&(0..20).collect::<Vec<_>>()));
    }
}
