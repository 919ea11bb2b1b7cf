//! Expert placements: the hypergraph view, the density oracle and the
//! constructors.
//!
//! A placement is read as a hypergraph whose vertices are GPUs and whose
//! hyperedges are EDP groups weighted by expert load. The optimal maximum
//! GPU load equals the largest induced density over GPU subsets.

mod cayley;
mod density;
mod random;

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{ClusterShape, Placement};

pub use cayley::{cayley_symmetric, supported_cayley_shapes, CayleyShape};
pub use density::{density_oracle, placement_density, DensityReport, OracleMode, EXACT_MAX_GPUS};
pub use random::{
    asymmetric_draw, greedy_replica_counts, greedy_replica_counts_capped, monte_carlo_placement, monte_carlo_search,
    random_placement, McSearch,
};

/// GPUs as vertices, one weighted hyperedge per expert.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementGraph {
    num_gpus: usize,
    edges: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl PlacementGraph {
    pub fn new(placement: &Placement, weights: &[f64]) -> Result<Self> {
        if weights.len() != placement.num_experts() {
            return Err(Error::Dimension(format!(
                "{} weights for {} experts",
                weights.len(),
                placement.num_experts()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Contract(format!("edge weight {w} is negative or not finite")));
        }
        Ok(Self {
            num_gpus: placement.num_gpus(),
            edges: placement.edp_groups().to_vec(),
            weights: weights.to_vec(),
        })
    }

    pub fn from_loads(placement: &Placement, loads: &[u64]) -> Result<Self> {
        let w: Vec<f64> = loads.iter().map(|&l| l as f64).collect();
        Self::new(placement, &w)
    }

    pub fn num_gpus(&self) -> usize {
        self.num_gpus
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total weight of edges fully inside `subset`.
    pub fn inside_weight(&self, subset: &[usize]) -> f64 {
        let set: HashSet<usize> = subset.iter().copied().collect();
        self.edges
            .iter()
            .zip(&self.weights)
            .filter(|(edge, _)| edge.iter().all(|g| set.contains(g)))
            .map(|(_, w)| w)
            .sum()
    }

    /// Induced density of `subset`: inside weight over subset size.
    pub fn density_of(&self, subset: &[usize]) -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        self.inside_weight(subset) / subset.len() as f64
    }
}

/// A broken placement invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Dimension(String),
    EmptyGroup {
        expert: usize,
    },
    DuplicateGpu {
        expert: usize,
        gpu: usize,
    },
    Range {
        expert: usize,
        gpu: usize,
    },
    SlotCollision {
        gpu: usize,
        slot: usize,
        experts: (usize, usize),
    },
    Capacity {
        gpu: usize,
        hosted: usize,
        capacity: usize,
    },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::Dimension(_) => "dimension",
            Violation::EmptyGroup { .. } => "empty group",
            Violation::DuplicateGpu { .. } => "duplicate",
            Violation::Range { .. } => "range",
            Violation::SlotCollision { .. } => "slot collision",
            Violation::Capacity { .. } => "capacity",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(msg) => write!(f, "dimension: {msg}"),
            Violation::EmptyGroup { expert } => write!(f, "empty group: expert {expert} has no GPUs"),
            Violation::DuplicateGpu { expert, gpu } => {
                write!(f, "duplicate: expert {expert} lists GPU {gpu} more than once")
            }
            Violation::Range { expert, gpu } => write!(f, "range: expert {expert} lists GPU {gpu}"),
            Violation::SlotCollision { gpu, slot, experts } => write!(
                f,
                "slot collision: experts {} and {} both use slot {slot} on GPU {gpu}",
                experts.0, experts.1
            ),
            Violation::Capacity { gpu, hosted, capacity } => {
                write!(f, "capacity: GPU {gpu} hosts {hosted} replicas, capacity is {capacity}")
            }
        }
    }
}

/// Checks structural invariants and slot consistency; returns every violation found.
pub fn validate_placement(placement: &Placement, shape: &ClusterShape) -> Vec<Violation> {
    let mut out = Vec::new();
    if placement.num_gpus() != shape.num_gpus || placement.num_experts() != shape.num_experts {
        out.push(Violation::Dimension(format!(
            "placement has {} experts on {} GPUs, shape has {} on {}",
            placement.num_experts(),
            placement.num_gpus(),
            shape.num_experts,
            shape.num_gpus
        )));
    }
    let g_count = placement.num_gpus();
    let mut owner: Vec<Vec<Option<usize>>> = vec![Vec::new(); g_count];
    for (e, group) in placement.edp_groups().iter().enumerate() {
        if group.is_empty() {
            out.push(Violation::EmptyGroup { expert: e });
        }
        let mut seen = HashSet::new();
        let slot = placement.slots()[e];
        for &g in group {
            if g >= g_count {
                out.push(Violation::Range { expert: e, gpu: g });
                continue;
            }
            if !seen.insert(g) {
                out.push(Violation::DuplicateGpu { expert: e, gpu: g });
                continue;
            }
            let slots = &mut owner[g];
            if slots.len() <= slot {
                slots.resize(slot + 1, None);
            }
            match slots[slot] {
                Some(other) => out.push(Violation::SlotCollision {
                    gpu: g,
                    slot,
                    experts: (other, e),
                }),
                None => slots[slot] = Some(e),
            }
        }
    }
    out
}

/// [`validate_placement`] plus the requirement that every GPU hosts exactly
/// `slots_per_gpu` replicas in slots `0..slots_per_gpu`.
pub fn validate_uniform_placement(placement: &Placement, shape: &ClusterShape) -> Vec<Violation> {
    let mut out = validate_placement(placement, shape);
    let capacity = shape.slots_per_gpu();
    for (g, hosted) in placement.experts_by_gpu().iter().enumerate() {
        let over = hosted.iter().any(|&e| placement.slots()[e] >= capacity);
        if hosted.len() != capacity || over {
            out.push(Violation::Capacity {
                gpu: g,
                hosted: hosted.len(),
                capacity,
            });
        }
    }
    out
}

/// Vanilla expert parallelism replicated `d` times: GPU `g` hosts the
/// experts of EP rank `g mod (G/d)`.
pub fn identical_placement(shape: &ClusterShape) -> Result<Placement> {
    shape.validate()?;
    if !shape.num_gpus.is_multiple_of(shape.d) {
        return Err(Error::Construction(format!(
            "identical placement needs d ({}) to divide num_gpus ({})",
            shape.d, shape.num_gpus
        )));
    }
    let ep = shape.ep_degree();
    if !shape.num_experts.is_multiple_of(ep) {
        return Err(Error::Construction(format!(
            "identical placement needs the EP degree ({ep}) to divide num_experts ({})",
            shape.num_experts
        )));
    }
    let per_rank = shape.num_experts / ep;
    let groups = (0..shape.num_experts)
        .map(|e| (0..shape.d).map(|k| e / per_rank + k * ep).collect())
        .collect();
    let slots = (0..shape.num_experts).map(|e| e % per_rank).collect();
    Placement::new(shape.num_gpus, shape.d, groups, slots)
}

/// Whether `placement` is an identical placement (every EDP group is one EP
/// rank replicated across the `d` EP groups).
pub fn is_identical_placement(placement: &Placement, shape: &ClusterShape) -> bool {
    if !shape.num_gpus.is_multiple_of(shape.d) {
        return false;
    }
    let ep = shape.ep_degree();
    placement.num_gpus() == shape.num_gpus
        && placement.edp_groups().iter().all(|group| {
            let mut sorted = group.clone();
            sorted.sort_unstable();
            let rank = sorted.first().copied().unwrap_or(usize::MAX);
            rank < ep && sorted == (0..shape.d).map(|k| rank + k * ep).collect::<Vec<_>>()
        })
}

/// Adjacency listing of a two-replica placement: one line per GPU,
/// `gpu: neighbors...` with neighbors sorted and repeated per parallel edge.
pub fn adjacency_listing(placement: &Placement) -> Result<String> {
    let mut adj = vec![Vec::new(); placement.num_gpus()];
    for (e, group) in placement.edp_groups().iter().enumerate() {
        if group.len() != 2 {
            return Err(Error::Placement(format!("expert {e} is not a two-replica edge")));
        }
        adj[group[0]].push(group[1]);
        adj[group[1]].push(group[0]);
    }
    let mut out = String::new();
    for (g, mut nbrs) in adj.into_iter().enumerate() {
        nbrs.sort_unstable();
        let list: Vec<String> = nbrs.iter().map(usize::to_string).collect();
        out.push_str(&format!("{g}: {}\n", list.join(" ")));
    }
    Ok(out)
}
