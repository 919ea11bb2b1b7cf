//! Shared domain types: cluster shape, expert placement, load matrices and
//! replica-load plans.
//!
//! GPUs and experts are dense 0-based indices throughout. Token counts are
//! exact integers; replica loads produced by the LP are `f64` and become
//! integral after [`crate::scheduler::integerize_plan`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of one scheduling group of GPUs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterShape {
    pub num_gpus: usize,
    pub num_experts: usize,
    /// Replicas per expert under symmetric placement (number of merged EP groups).
    pub d: usize,
    pub gpus_per_node: usize,
}

impl ClusterShape {
    pub fn new(num_gpus: usize, num_experts: usize, d: usize, gpus_per_node: usize) -> Result<Self> {
        let shape = Self {
            num_gpus,
            num_experts,
            d,
            gpus_per_node,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_gpus == 0 {
            return Err(Error::Shape("num_gpus must be at least 1".into()));
        }
        if self.num_experts == 0 {
            return Err(Error::Shape("num_experts must be at least 1".into()));
        }
        if self.d < 2 || self.d > self.num_gpus {
            return Err(Error::Shape(format!(
                "d must satisfy 1 < d <= num_gpus ({}), got {}",
                self.num_gpus, self.d
            )));
        }
        if self.gpus_per_node == 0 || !self.num_gpus.is_multiple_of(self.gpus_per_node) {
            return Err(Error::Shape(format!(
                "gpus_per_node ({}) must divide num_gpus ({})",
                self.gpus_per_node, self.num_gpus
            )));
        }
        Ok(())
    }

    /// Total replica slots needed for `d` replicas of every expert.
    pub fn total_replicas(&self) -> usize {
        self.num_experts * self.d
    }

    /// Local expert slots on each GPU (rounded up when replicas do not divide evenly).
    pub fn slots_per_gpu(&self) -> usize {
        self.total_replicas().div_ceil(self.num_gpus)
    }

    /// GPUs per vanilla EP group.
    pub fn ep_degree(&self) -> usize {
        self.num_gpus / self.d
    }

    pub fn topology(&self) -> Topology {
        Topology {
            num_gpus: self.num_gpus,
            gpus_per_node: self.gpus_per_node,
        }
    }
}

/// GPUs grouped into equally sized nodes; GPU `g` lives on node `g / gpus_per_node`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub num_gpus: usize,
    pub gpus_per_node: usize,
}

impl Topology {
    pub fn new(num_gpus: usize, gpus_per_node: usize) -> Result<Self> {
        if gpus_per_node == 0 || !num_gpus.is_multiple_of(gpus_per_node) {
            return Err(Error::Shape(format!(
                "gpus_per_node ({gpus_per_node}) must divide num_gpus ({num_gpus})"
            )));
        }
        Ok(Self {
            num_gpus,
            gpus_per_node,
        })
    }

    pub fn single_node(num_gpus: usize) -> Self {
        Self {
            num_gpus,
            gpus_per_node: num_gpus,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_gpus / self.gpus_per_node
    }

    pub fn node_of(&self, gpu: usize) -> usize {
        gpu / self.gpus_per_node
    }

    pub fn same_node(&self, a: usize, b: usize) -> bool {
        self.node_of(a) == self.node_of(b)
    }
}

/// Expert-to-GPU mapping: the EDP group of every expert plus its local slot index.
///
/// Serialized as `{num_gpus, num_experts, d, edp_groups, slots}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    num_gpus: usize,
    num_experts: usize,
    d: usize,
    edp_groups: Vec<Vec<usize>>,
    slots: Vec<usize>,
}

impl Placement {
    /// Builds a placement after checking dimensions. Structural invariants
    /// (duplicates, slot collisions) are reported by
    /// [`crate::placement::validate_placement`].
    pub fn new(num_gpus: usize, d: usize, edp_groups: Vec<Vec<usize>>, slots: Vec<usize>) -> Result<Self> {
        if edp_groups.len() != slots.len() {
            return Err(Error::Dimension(format!(
                "{} EDP groups but {} slot indices",
                edp_groups.len(),
                slots.len()
            )));
        }
        Ok(Self {
            num_gpus,
            num_experts: edp_groups.len(),
            d,
            edp_groups,
            slots,
        })
    }

    pub fn num_gpus(&self) -> usize {
        self.num_gpus
    }

    pub fn num_experts(&self) -> usize {
        self.num_experts
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edp_groups(&self) -> &[Vec<usize>] {
        &self.edp_groups
    }

    pub fn group(&self, expert: usize) -> &[usize] {
        &self.edp_groups[expert]
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn hosts(&self, expert: usize, gpu: usize) -> bool {
        self.edp_groups[expert].contains(&gpu)
    }

    /// Experts hosted on each GPU, in expert-id order.
    pub fn experts_by_gpu(&self) -> Vec<Vec<usize>> {
        let mut by_gpu = vec![Vec::new(); self.num_gpus];
        for (e, group) in self.edp_groups.iter().enumerate() {
            for &g in group {
                if g < self.num_gpus {
                    by_gpu[g].push(e);
                }
            }
        }
        by_gpu
    }

    pub fn replicas_per_gpu(&self) -> Vec<usize> {
        self.experts_by_gpu().iter().map(Vec::len).collect()
    }

    /// Set of `(expert, gpu)` pairs.
    pub fn replica_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edp_groups
            .iter()
            .enumerate()
            .flat_map(|(e, group)| group.iter().map(move |&g| (e, g)))
            .collect();
        pairs.sort_unstable();
        pairs
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("placement serializes")
    }
}

/// Per-(expert, source GPU) token counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadMatrix {
    num_experts: usize,
    num_gpus: usize,
    counts: Vec<u64>,
}

impl LoadMatrix {
    pub fn zeros(num_experts: usize, num_gpus: usize) -> Self {
        Self {
            num_experts,
            num_gpus,
            counts: vec![0; num_experts * num_gpus],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let num_experts = rows.len();
        let num_gpus = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_gpus) {
            return Err(Error::Dimension("load matrix rows have unequal lengths".into()));
        }
        Ok(Self {
            num_experts,
            num_gpus,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_experts(&self) -> usize {
        self.num_experts
    }

    pub fn num_gpus(&self) -> usize {
        self.num_gpus
    }

    pub fn get(&self, expert: usize, gpu: usize) -> u64 {
        self.counts[expert * self.num_gpus + gpu]
    }

    pub fn set(&mut self, expert: usize, gpu: usize, tokens: u64) {
        self.counts[expert * self.num_gpus + gpu] = tokens;
    }

    pub fn add(&mut self, expert: usize, gpu: usize, tokens: u64) {
        self.counts[expert * self.num_gpus + gpu] += tokens;
    }

    pub fn row(&self, expert: usize) -> &[u64] {
        &self.counts[expert * self.num_gpus..(expert + 1) * self.num_gpus]
    }

    pub fn expert_totals(&self) -> Vec<u64> {
        (0..self.num_experts).map(|e| self.row(e).iter().sum()).collect()
    }

    /// Tokens originating on each GPU, over all experts.
    pub fn source_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.num_gpus];
        for e in 0..self.num_experts {
            for (t, &c) in totals.iter_mut().zip(self.row(e)) {
                *t += c;
            }
        }
        totals
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            num_experts: self.num_experts,
            num_gpus: self.num_gpus,
            counts: self.counts.iter().map(|&c| c * factor).collect(),
        }
    }

    pub fn check_dims(&self, num_experts: usize, num_gpus: usize) -> Result<()> {
        if self.num_experts != num_experts || self.num_gpus != num_gpus {
            return Err(Error::Dimension(format!(
                "load matrix is {}x{}, expected {}x{} (experts x GPUs)",
                self.num_experts, self.num_gpus, num_experts, num_gpus
            )));
        }
        Ok(())
    }
}

/// Replica loads `x_e^g` for every expert over its EDP group, plus the
/// resulting maximum GPU load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaLoadPlan {
    num_gpus: usize,
    /// Per expert, `(gpu, load)` in EDP-group list order.
    entries: Vec<Vec<(usize, f64)>>,
    objective: f64,
}

impl ReplicaLoadPlan {
    pub fn from_entries(num_gpus: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        let mut plan = Self {
            num_gpus,
            entries,
            objective: 0.0,
        };
        plan.objective = plan.gpu_loads().into_iter().fold(0.0, f64::max);
        plan
    }

    pub fn zeros(placement: &Placement) -> Self {
        let entries = placement
            .edp_groups()
            .iter()
            .map(|group| group.iter().map(|&g| (g, 0.0)).collect())
            .collect();
        Self::from_entries(placement.num_gpus(), entries)
    }

    pub fn num_gpus(&self) -> usize {
        self.num_gpus
    }

    pub fn num_experts(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Vec<(usize, f64)>] {
        &self.entries
    }

    pub fn expert(&self, expert: usize) -> &[(usize, f64)] {
        &self.entries[expert]
    }

    /// Replica load of `expert` on `gpu`, zero if the GPU does not host it.
    pub fn get(&self, expert: usize, gpu: usize) -> f64 {
        self.entries[expert]
            .iter()
            .find(|(g, _)| *g == gpu)
            .map_or(0.0, |&(_, x)| x)
    }

    /// Maximum GPU load, as reported by the solver.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn gpu_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.num_gpus];
        for expert in &self.entries {
            for &(g, x) in expert {
                loads[g] += x;
            }
        }
        loads
    }

    pub fn expert_total(&self, expert: usize) -> f64 {
        self.entries[expert].iter().map(|&(_, x)| x).sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.entries.len()).map(|e| self.expert_total(e)).sum()
    }

    pub fn is_integral(&self) -> bool {
        self.entries.iter().flatten().all(|&(_, x)| x.fract() == 0.0)
    }
}

/// Per-expert total tokens `load_e`.
pub fn aggregate_expert_loads(loads: &LoadMatrix, shape: &ClusterShape) -> Result<Vec<u64>> {
    loads.check_dims(shape.num_experts, shape.num_gpus)?;
    Ok(loads.expert_totals())
}

/// Max GPU load divided by mean GPU load.
pub fn balance_ratio(plan: &ReplicaLoadPlan, shape: &ClusterShape) -> Result<f64> {
    if plan.num_gpus() != shape.num_gpus || plan.num_experts() != shape.num_experts {
        return Err(Error::Dimension(format!(
            "plan covers {} experts on {} GPUs, shape has {} experts on {} GPUs",
            plan.num_experts(),
            plan.num_gpus(),
            shape.num_experts,
            shape.num_gpus
        )));
    }
    balance_ratio_of(&plan.gpu_loads())
}

/// Balance ratio of a raw per-GPU load vector.
pub fn balance_ratio_of(gpu_loads: &[f64]) -> Result<f64> {
    let total: f64 = gpu_loads.iter().sum();
    if gpu_loads.is_empty() || total <= 0.0 {
        return Err(Error::UndefinedMetric("balance ratio of zero total load"));
    }
    let max = gpu_loads.iter().copied().fold(f64::MIN, f64::max);
    Ok(max / (total / gpu_loads.len() as f64))
}
