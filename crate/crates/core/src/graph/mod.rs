//! Skeleton graphs and the eight graph function modules.
//!
//! The fixed operator is `L = I + D^{-1/2} A D^{-1/2}`. Higher-order
//! modules use Chebyshev components `T_k(L̂)` of the rescaled operator
//! `L̂ = D^{-1/2} A D^{-1/2}`, whose spectrum lies in `[-1, 1]`.

mod dynamic;
mod module;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dynamic::{DynamicGraphGenerator, DynamicMode};
pub use module::{apply_module, propagate};

/// Undirected skeleton graph, optionally with a kinematic tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    parent: Option<Vec<Option<usize>>>,
}

impl SkeletonTopology {
    pub fn new(num_joints: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Contract("topology needs at least one joint".into()));
        }
        let mut seen = BTreeSet::new();
        for &(i, j) in &edges {
            if i >= num_joints || j >= num_joints {
                return Err(Error::Config(format!(
                    "edge ({i}, {j}) outside [0, {num_joints})"
                )));
            }
            if i == j {
                return Err(Error::Config(format!("self-loop on joint {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(SkeletonTopology {
            num_joints,
            edges,
            parent: None,
        })
    }

    /// Attach a parent map; `None` marks a root. Must describe a forest.
    pub fn with_parents(mut self, parent: Vec<Option<usize>>) -> Result<Self> {
        if parent.len() != self.num_joints {
            return Err(Error::Config(format!(
                "parent array has {} entries for {} joints",
                parent.len(),
                self.num_joints
            )));
        }
        for start in 0..parent.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                if p >= self.num_joints {
                    return Err(Error::Config(format!("parent {p} of joint {cur} out of range")));
                }
                cur = p;
                steps += 1;
                if steps > parent.len() {
                    return Err(Error::Config(format!("parent array has a cycle through joint {start}")));
                }
            }
        }
        self.parent = Some(parent);
        Ok(self)
    }

    /// Parent map from a breadth-first traversal of the edge list, rooted
    /// at the lowest-numbered joint of each connected component.
    pub fn with_bfs_parents(self) -> Self {
        let v = self.num_joints;
        let adj = self.neighbors();
        let mut parent = vec![None; v];
        let mut visited = vec![false; v];
        for root in 0..v {
            if visited[root] {
                continue;
            }
            visited[root] = true;
            let mut queue = VecDeque::from([root]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if !visited[w] {
                        visited[w] = true;
                        parent[w] = Some(u);
                        queue.push_back(w);
                    }
                }
            }
        }
        SkeletonTopology {
            parent: Some(parent),
            ..self
        }
    }

    /// The 25-joint Kinect v2 skeleton, rooted at the spine joint (20).
    pub fn ntu25() -> Self {
        // (child, parent), 1-based as in the dataset documentation.
        const PAIRS: [(usize, usize); 24] = [
            (1, 2),
            (2, 21),
            (3, 21),
            (4, 3),
            (5, 21),
            (6, 5),
            (7, 6),
            (8, 7),
            (9, 21),
            (10, 9),
            (11, 10),
            (12, 11),
            (13, 1),
            (14, 13),
            (15, 14),
            (16, 15),
            (17, 1),
            (18, 17),
            (19, 18),
            (20, 19),
            (22, 23),
            (23, 8),
            (24, 25),
            (25, 12),
        ];
        let edges = PAIRS.iter().map(|&(c, p)| (c - 1, p - 1)).collect();
        let mut parent = vec![None; 25];
        for &(c, p) in &PAIRS {
            parent[c - 1] = Some(p - 1);
        }
        SkeletonTopology::new(25, edges)
            .and_then(|t| t.with_parents(parent))
            .expect("built-in topology is valid")
    }

    /// Binary-tree skeleton on `num_joints` joints: joint `j` hangs off
    /// `(j - 1) / 2`.
    pub fn binary_tree(num_joints: usize) -> Result<Self> {
        let edges = (1..num_joints).map(|j| (j, (j - 1) / 2)).collect();
        let parent = (0..num_joints)
            .map(|j| if j == 0 { None } else { Some((j - 1) / 2) })
            .collect();
        SkeletonTopology::new(num_joints, edges)?.with_parents(parent)
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parent(&self) -> Option<&[Option<usize>]> {
        self.parent.as_deref()
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|n| n.sort_unstable());
        adj
    }

    /// Symmetric 0/1 adjacency, row-major `V×V`.
    pub fn adjacency(&self) -> Vec<f64> {
        let v = self.num_joints;
        let mut a = vec![0.0; v * v];
        for &(i, j) in &self.edges {
            a[i * v + j] = 1.0;
            a[j * v + i] = 1.0;
        }
        a
    }
}

/// `L = I + D^{-1/2} A D^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGraph {
    matrix: Tensor,
}

impl NormalizedGraph {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn num_joints(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Build `L` for a topology. Joints of degree zero keep only their
/// identity row and column.
pub fn normalized_graph(topology: &SkeletonTopology) -> Result<NormalizedGraph> {
    let v = topology.num_joints();
    if v == 0 {
        return Err(Error::Contract("empty topology".into()));
    }
    let a = topology.adjacency();
    let inv_sqrt_deg: Vec<f64> = (0..v)
        .map(|i| {
            let d: f64 = a[i * v..(i + 1) * v].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..v {
            l[i * v + j] = inv_sqrt_deg[i] * a[i * v + j] * inv_sqrt_deg[j];
        }
        l[i * v + i] += 1.0;
    }
    Ok(NormalizedGraph {
        matrix: Tensor::new([v, v], l)?,
    })
}

/// How the higher-order modules read their `L^k` graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChebBasis {
    /// Chebyshev components `T_k(L̂)` with `L̂ = L - I`.
    #[default]
    Chebyshev,
    /// Plain matrix powers of `L`.
    Power,
}

impl FromStr for ChebBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chebyshev" => Ok(ChebBasis::Chebyshev),
            "power" => Ok(ChebBasis::Power),
            other => Err(Error::Config(format!("unknown cheb_basis {other:?}"))),
        }
    }
}

pub const CHEB_ORDER: usize = 4;

/// `[T_0, …, T_K]` plus a row-normalized copy of `T_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevStack {
    order: usize,
    components: Vec<Tensor>,
    normalized_t4: Tensor,
}

impl ChebyshevStack {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> &[Tensor] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &Tensor {
        &self.components[k]
    }

    pub fn normalized_t4(&self) -> &Tensor {
        &self.normalized_t4
    }
}

fn matmul_square(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    crate::autodiff::kernels::gemm(n, n, n, a, false, b, false, &mut c, false);
    c
}

/// Chebyshev components of `L̂ = L - I` up to order four.
pub fn chebyshev_components(l: &NormalizedGraph) -> ChebyshevStack {
    let v = l.num_joints();
    let mut l_hat = l.matrix.data().to_vec();
    for i in 0..v {
        l_hat[i * v + i] -= 1.0;
    }
    let mut comps: Vec<Vec<f64>> = vec![Tensor::eye(v).into_data(), l_hat.clone()];
    for k in 2..=CHEB_ORDER {
        let prod = matmul_square(&l_hat, &comps[k - 1], v);
        let next = prod
            .iter()
            .zip(&comps[k - 2])
            .map(|(p, q)| 2.0 * p - q)
            .collect();
        comps.push(next);
    }
    stack_from(comps, v)
}

/// Matrix powers `L^0 … L^4` of the fixed operator.
pub fn power_components(l: &NormalizedGraph) -> ChebyshevStack {
    let v = l.num_joints();
    let base = l.matrix.data().to_vec();
    let mut comps: Vec<Vec<f64>> = vec![Tensor::eye(v).into_data()];
    for k in 1..=CHEB_ORDER {
        let next = matmul_square(&base, &comps[k - 1], v);
        comps.push(next);
    }
    stack_from(comps, v)
}

fn stack_from(comps: Vec<Vec<f64>>, v: usize) -> ChebyshevStack {
    let normalized = row_normalize_abs(&comps[CHEB_ORDER], v);
    ChebyshevStack {
        order: CHEB_ORDER,
        components: comps
            .into_iter()
            .map(|c| Tensor::new([v, v], c).expect("square component"))
            .collect(),
        normalized_t4: Tensor::new([v, v], normalized).expect("square component"),
    }
}

/// `|M_ij| / Σ_j |M_ij|`; an all-zero row becomes the identity row.
fn row_normalize_abs(m: &[f64], v: usize) -> Vec<f64> {
    let mut out = vec![0.0; v * v];
    for i in 0..v {
        let row = &m[i * v..(i + 1) * v];
        let total: f64 = row.iter().map(|x| x.abs()).sum();
        if total > 0.0 {
            for j in 0..v {
                out[i * v + j] = row[j].abs() / total;
            }
        } else {
            out[i * v + i] = 1.0;
        }
    }
    out
}

/// The eight graph function modules, in the column order of the
/// searched-architecture tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleKind {
    #[serde(rename = "L")]
    FixedL,
    #[serde(rename = "L4n")]
    Cheb4Norm,
    #[serde(rename = "L4")]
    Cheb4,
    #[serde(rename = "L3")]
    Cheb3,
    #[serde(rename = "L2")]
    Cheb2,
    #[serde(rename = "M(S)")]
    DynSpatial,
    #[serde(rename = "M(T)")]
    DynTemporal,
    #[serde(rename = "M(ST)")]
    DynSpatioTemporal,
}

impl ModuleKind {
    pub const COUNT: usize = 8;

    pub const ALL: [ModuleKind; 8] = [
        ModuleKind::FixedL,
        ModuleKind::Cheb4Norm,
        ModuleKind::Cheb4,
        ModuleKind::Cheb3,
        ModuleKind::Cheb2,
        ModuleKind::DynSpatial,
        ModuleKind::DynTemporal,
        ModuleKind::DynSpatioTemporal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::FixedL => "L",
            ModuleKind::Cheb4Norm => "L4n",
            ModuleKind::Cheb4 => "L4",
            ModuleKind::Cheb3 => "L3",
            ModuleKind::Cheb2 => "L2",
            ModuleKind::DynSpatial => "M(S)",
            ModuleKind::DynTemporal => "M(T)",
            ModuleKind::DynSpatioTemporal => "M(ST)",
        }
    }

    pub fn dynamic_mode(self) -> Option<DynamicMode> {
        match self {
            ModuleKind::DynSpatial => Some(DynamicMode::Spatial),
            ModuleKind::DynTemporal => Some(DynamicMode::Temporal),
            ModuleKind::DynSpatioTemporal => Some(DynamicMode::SpatioTemporal),
            _ => None,
        }
    }

    pub fn is_dynamic(self) -> bool {
        self.dynamic_mode().is_some()
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown module name {s:?}")))
    }
}

/// Fixed graphs for one topology: `L` and the order-2..4 stack.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    basis: ChebBasis,
    normalized: NormalizedGraph,
    stack: ChebyshevStack,
}

impl GraphSet {
    pub fn new(topology: &SkeletonTopology, basis: ChebBasis) -> Result<Self> {
        let normalized = normalized_graph(topology)?;
        let stack = match basis {
            ChebBasis::Chebyshev => chebyshev_components(&normalized),
            ChebBasis::Power => power_components(&normalized),
        };
        Ok(GraphSet {
            basis,
            normalized,
            stack,
        })
    }

    pub fn basis(&self) -> ChebBasis {
        self.basis
    }

    pub fn num_joints(&self) -> usize {
        self.normalized.num_joints()
    }

    pub fn normalized(&self) -> &NormalizedGraph {
        &self.normalized
    }

    pub fn stack(&self) -> &ChebyshevStack {
        &self.stack
    }

    /// The `V×V` graph a fixed module propagates with; `None` for the
    /// dynamic modules.
    pub fn fixed_graph(&self, kind: ModuleKind) -> Option<&Tensor> {
        match kind {
            ModuleKind::FixedL => Some(self.normalized.matrix()),
            ModuleKind::Cheb4Norm => Some(self.stack.normalized_t4()),
            ModuleKind::Cheb4 => Some(self.stack.component(4)),
            ModuleKind::Cheb3 => Some(self.stack.component(3)),
            ModuleKind::Cheb2 => Some(self.stack.component(2)),
            _ => None,
        }
    }
}
