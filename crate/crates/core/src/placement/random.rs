use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{density::placement_density, validate_placement, validate_uniform_placement};
use crate::error::{Error, Result};
use crate::model::{ClusterShape, Placement};

const RANDOM_RETRIES: usize = 64;
const PACK_NODE_LIMIT: usize = 200_000;

/// Symmetric random placement: every expert gets `d` distinct GPUs and the
/// replica counts per GPU differ by at most one.
///
/// Experts are laid out slot by slot; within a slot each expert takes `d`
/// GPUs not yet used in that slot, preferring the least-loaded ones with
/// random tie-breaking.
pub fn random_placement(shape: &ClusterShape, seed: u64) -> Result<Placement> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_count = shape.num_gpus;
    let d = shape.d;
    let per_slot = g_count / d;
    for _ in 0..RANDOM_RETRIES {
        let mut hosted = vec![0usize; g_count];
        let mut groups = Vec::with_capacity(shape.num_experts);
        let mut slots = Vec::with_capacity(shape.num_experts);
        let mut used = vec![false; g_count];
        for e in 0..shape.num_experts {
            let slot = e / per_slot;
            if e % per_slot == 0 {
                used.iter_mut().for_each(|u| *u = false);
            }
            let mut free: Vec<(usize, u32, usize)> = (0..g_count)
                .filter(|&g| !used[g])
                .map(|g| (hosted[g], rng.random::<u32>(), g))
                .collect();
            free.sort_unstable();
            let group: Vec<usize> = free[..d].iter().map(|&(_, _, g)| g).collect();
            for &g in &group {
                used[g] = true;
                hosted[g] += 1;
            }
            groups.push(group);
            slots.push(slot);
        }
        let spread = hosted.iter().max().unwrap_or(&0) - hosted.iter().min().unwrap_or(&0);
        let placement = Placement::new(g_count, d, groups, slots)?;
        if spread <= 1 && validate_placement(&placement, shape).is_empty() {
            return Ok(placement);
        }
    }
    Err(Error::Construction(format!(
        "no balanced slot-consistent random placement after {RANDOM_RETRIES} attempts"
    )))
}

#[derive(PartialEq)]
struct Entry {
    load: f64,
    replicas: usize,
    expert: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Max-heap on load per replica, ties to the lowest expert id.
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.load * other.replicas as f64;
        let rhs = other.load * self.replicas as f64;
        lhs.total_cmp(&rhs).then(other.expert.cmp(&self.expert))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One replica per expert, then each extra slot goes to the expert with the
/// largest load per replica.
pub fn greedy_replica_counts(expert_loads: &[f64], total_replica_slots: usize) -> Result<Vec<usize>> {
    greedy_replica_counts_capped(expert_loads, total_replica_slots, usize::MAX)
}

/// [`greedy_replica_counts`] with at most `cap` replicas per expert.
pub fn greedy_replica_counts_capped(
    expert_loads: &[f64],
    total_replica_slots: usize,
    cap: usize,
) -> Result<Vec<usize>> {
    let n = expert_loads.len();
    if total_replica_slots < n {
        return Err(Error::Construction(format!(
            "{total_replica_slots} replica slots cannot cover {n} experts"
        )));
    }
    if cap == 0 || cap.saturating_mul(n) < total_replica_slots {
        return Err(Error::Construction(format!(
            "{total_replica_slots} replica slots exceed {n} experts x cap {cap}"
        )));
    }
    if let Some(l) = expert_loads.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::Contract(format!("expert load {l} is negative or not finite")));
    }
    let mut counts = vec![1usize; n];
    let mut heap: BinaryHeap<Entry> = expert_loads
        .iter()
        .enumerate()
        .filter(|_| cap > 1)
        .map(|(expert, &load)| Entry {
            load,
            replicas: 1,
            expert,
        })
        .collect();
    for _ in n..total_replica_slots {
        let mut top = heap.pop().expect("cap leaves room");
        top.replicas += 1;
        counts[top.expert] = top.replicas;
        if top.replicas < cap {
            heap.push(top);
        }
    }
    Ok(counts)
}

/// Packs experts into slots so that each slot's replica counts sum to exactly
/// `num_gpus`. Returns the slot of every expert.
fn pack_slots(counts: &[usize], num_slots: usize, num_gpus: usize) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&e| (std::cmp::Reverse(counts[e]), e));
    let mut remaining = vec![num_gpus; num_slots];
    let mut assign = vec![0usize; counts.len()];
    let mut nodes = 0usize;

    fn dfs(
        i: usize,
        order: &[usize],
        counts: &[usize],
        remaining: &mut [usize],
        assign: &mut [usize],
        nodes: &mut usize,
    ) -> bool {
        if i == order.len() {
            return remaining.iter().all(|&r| r == 0);
        }
        *nodes += 1;
        if *nodes > PACK_NODE_LIMIT {
            return false;
        }
        let e = order[i];
        let c = counts[e];
        let mut tried: Vec<usize> = Vec::new();
        for s in 0..remaining.len() {
            let r = remaining[s];
            if r < c || tried.contains(&r) {
                continue;
            }
            tried.push(r);
            remaining[s] -= c;
            assign[e] = s;
            if dfs(i + 1, order, counts, remaining, assign, nodes) {
                return true;
            }
            remaining[s] += c;
        }
        false
    }

    dfs(0, &order, counts, &mut remaining, &mut assign, &mut nodes).then_some(assign)
}

/// Packs `counts` into slots, nudging replicas from the largest count to the
/// smallest when an exact packing does not exist.
fn pack_with_repair(counts: &[usize], shape: &ClusterShape) -> Result<(Vec<usize>, Vec<usize>)> {
    let num_slots = shape.slots_per_gpu();
    let mut counts = counts.to_vec();
    for _ in 0..=counts.len() * shape.num_gpus {
        if let Some(slots) = pack_slots(&counts, num_slots, shape.num_gpus) {
            return Ok((counts, slots));
        }
        let hi = (0..counts.len())
            .max_by_key(|&e| (counts[e], std::cmp::Reverse(e)))
            .expect("experts");
        let lo = (0..counts.len()).min_by_key(|&e| (counts[e], e)).expect("experts");
        if counts[hi] <= counts[lo] + 1 {
            break;
        }
        counts[hi] -= 1;
        counts[lo] += 1;
    }
    Err(Error::Construction(
        "replica counts cannot be packed into consistent local slots".into(),
    ))
}

fn check_counts(counts: &[usize], shape: &ClusterShape) -> Result<()> {
    shape.validate()?;
    if counts.len() != shape.num_experts {
        return Err(Error::Dimension(format!(
            "{} replica counts for {} experts",
            counts.len(),
            shape.num_experts
        )));
    }
    let total: usize = counts.iter().sum();
    let capacity = shape.num_gpus * shape.slots_per_gpu();
    if total != capacity {
        return Err(Error::Contract(format!(
            "replica counts sum to {total}, but the cluster has {capacity} slots"
        )));
    }
    if let Some(e) = counts.iter().position(|&c| c == 0 || c > shape.num_gpus) {
        return Err(Error::Contract(format!(
            "expert {e} has {} replicas; counts must lie in 1..={}",
            counts[e], shape.num_gpus
        )));
    }
    Ok(())
}

fn draw(counts: &[usize], slots: &[usize], shape: &ClusterShape, rng: &mut ChaCha8Rng) -> Result<Placement> {
    let mut groups = vec![Vec::new(); counts.len()];
    for s in 0..shape.slots_per_gpu() {
        let mut gpus: Vec<usize> = (0..shape.num_gpus).collect();
        gpus.shuffle(rng);
        let mut next = 0;
        for e in (0..counts.len()).filter(|&e| slots[e] == s) {
            groups[e] = gpus[next..next + counts[e]].to_vec();
            next += counts[e];
        }
    }
    Placement::new(shape.num_gpus, shape.d, groups, slots.to_vec())
}

/// A single random slot-consistent placement honoring `counts`.
pub fn asymmetric_draw(counts: &[usize], shape: &ClusterShape, seed: u64) -> Result<Placement> {
    check_counts(counts, shape)?;
    let (counts, slots) = pack_with_repair(counts, shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(&counts, &slots, shape, &mut rng)
}

/// Outcome of a Monte-Carlo placement search.
#[derive(Clone, Debug)]
pub struct McSearch {
    pub placement: Placement,
    pub density: f64,
    /// Density of every evaluated sample, in draw order.
    pub sample_densities: Vec<f64>,
}

/// Draws `n_samples` random placements for `counts` and keeps the one with the
/// smallest density under `expert_loads` (first one among ties).
pub fn monte_carlo_search(
    expert_loads: &[f64],
    counts: &[usize],
    shape: &ClusterShape,
    n_samples: usize,
    seed: u64,
) -> Result<McSearch> {
    check_counts(counts, shape)?;
    if expert_loads.len() != shape.num_experts {
        return Err(Error::Dimension(format!(
            "{} expert loads for {} experts",
            expert_loads.len(),
            shape.num_experts
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidOption("n_samples must be at least 1".into()));
    }
    let (counts, slots) = pack_with_repair(counts, shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Placement, f64)> = None;
    let mut sample_densities = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let candidate = draw(&counts, &slots, shape, &mut rng)?;
        debug_assert!(validate_uniform_placement(&candidate, shape).is_empty());
        let density = placement_density(&candidate, expert_loads)?.density;
        sample_densities.push(density);
        if best.as_ref().is_none_or(|(_, d)| density < *d) {
            best = Some((candidate, density));
        }
    }
    let (placement, density) = best.expect("at least one sample");
    Ok(McSearch {
        placement,
        density,
        sample_densities,
    })
}

pub fn monte_carlo_placement(
    expert_loads: &[f64],
    counts: &[usize],
    shape: &ClusterShape,
    n_samples: usize,
    seed: u64,
) -> Result<Placement> {
    monte_carlo_search(expert_loads, counts, shape, n_samples, seed).map(|s| s.placement)
}
