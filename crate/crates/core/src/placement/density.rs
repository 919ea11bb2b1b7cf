use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PlacementGraph;
use crate::error::{Error, Result};
use crate::model::Placement;

/// Largest GPU count accepted by exact enumeration.
pub const EXACT_MAX_GPUS: usize = 24;

/// Weights are held in fixed point so subset sums are exact and
/// deterministic regardless of enumeration order.
const SCALE: f64 = 4_294_967_296.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    /// Ascending GPU ids of the densest subset found; the largest one among ties.
    pub best_subset: Vec<usize>,
    pub density: f64,
    /// Entry `k - 1` is the best density over evaluated subsets of size `k`.
    pub per_size: Vec<f64>,
}

fn fixed_weights(graph: &PlacementGraph) -> Result<Vec<i128>> {
    for (e, edge) in graph.edges().iter().enumerate() {
        if let Some(&g) = edge.iter().find(|&&g| g >= graph.num_gpus()) {
            return Err(Error::Placement(format!("expert {e} lists GPU {g}")));
        }
        if edge.is_empty() && graph.weights()[e] > 0.0 {
            return Err(Error::Placement(format!("expert {e} has load but an empty EDP group")));
        }
    }
    Ok(graph.weights().iter().map(|w| (w * SCALE).round() as i128).collect())
}

/// `a = (weight, size)` beats `b` when denser, or equally dense and larger.
fn better(a: (i128, usize), b: (i128, usize)) -> bool {
    let lhs = a.0 * b.1 as i128;
    let rhs = b.0 * a.1 as i128;
    lhs > rhs || (lhs == rhs && a.1 > b.1)
}

fn to_density(weight: i128, size: usize) -> f64 {
    if size == 0 {
        0.0
    } else {
        weight as f64 / SCALE / size as f64
    }
}

/// Maximum induced density of the weighted placement graph.
pub fn density_oracle(graph: &PlacementGraph, mode: OracleMode) -> Result<DensityReport> {
    let weights = fixed_weights(graph)?;
    match mode {
        OracleMode::Exact => exact(graph, &weights),
        OracleMode::Sampled { samples, seed } => sampled(graph, &weights, samples, seed),
    }
}

/// Exact when the cluster is small enough, sampled otherwise.
pub fn placement_density(placement: &Placement, weights: &[f64]) -> Result<DensityReport> {
    let graph = PlacementGraph::new(placement, weights)?;
    let mode = if placement.num_gpus() <= EXACT_MAX_GPUS {
        OracleMode::Exact
    } else {
        OracleMode::Sampled { samples: 4096, seed: 0 }
    };
    density_oracle(&graph, mode)
}

fn exact(graph: &PlacementGraph, weights: &[i128]) -> Result<DensityReport> {
    let n = graph.num_gpus();
    if n > EXACT_MAX_GPUS {
        return Err(Error::Capacity {
            max: EXACT_MAX_GPUS,
            got: n,
        });
    }
    let masks: Vec<u32> = graph
        .edges()
        .iter()
        .map(|edge| edge.iter().fold(0u32, |m, &g| m | (1 << g)))
        .collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, edge) in graph.edges().iter().enumerate() {
        let mut seen = 0u32;
        for &g in edge {
            if seen & (1 << g) == 0 {
                incident[g].push(e);
                seen |= 1 << g;
            }
        }
    }
    // Empty edges are inside every subset.
    let always: i128 = masks
        .iter()
        .zip(weights)
        .filter(|(m, _)| **m == 0)
        .map(|(_, w)| w)
        .sum();

    let mut per_size = vec![i128::MIN; n];
    let mut best = (0i128, 0usize, 0u32);
    let mut subset = 0u32;
    let mut inside = always;
    for i in 1u64..(1u64 << n) {
        let v = i.trailing_zeros() as usize;
        let bit = 1u32 << v;
        if subset & bit == 0 {
            subset |= bit;
            for &e in &incident[v] {
                if masks[e] & !subset == 0 {
                    inside += weights[e];
                }
            }
        } else {
            for &e in &incident[v] {
                if masks[e] & !subset == 0 {
                    inside -= weights[e];
                }
            }
            subset &= !bit;
        }
        let size = subset.count_ones() as usize;
        if inside > per_size[size - 1] {
            per_size[size - 1] = inside;
        }
        let candidate = (inside, size);
        if best.1 == 0 || better(candidate, (best.0, best.1)) {
            best = (inside, size, subset);
        }
    }
    let best_subset = (0..n).filter(|&g| best.2 & (1 << g) != 0).collect();
    Ok(DensityReport {
        best_subset,
        density: to_density(best.0, best.1),
        per_size: per_size
            .iter()
            .enumerate()
            .map(|(k, &w)| to_density(w, k + 1))
            .collect(),
    })
}

fn inside_weight(graph: &PlacementGraph, weights: &[i128], member: &[bool]) -> i128 {
    graph
        .edges()
        .iter()
        .zip(weights)
        .filter(|(edge, _)| edge.iter().all(|&g| member[g]))
        .map(|(_, w)| *w)
        .sum()
}

fn sampled(graph: &PlacementGraph, weights: &[i128], samples: usize, seed: u64) -> Result<DensityReport> {
    let n = graph.num_gpus();
    let mut per_size = vec![0i128; n];
    let mut best: Option<(i128, Vec<usize>)> = None;
    let mut consider = |subset: Vec<usize>, inside: i128| {
        if subset.is_empty() {
            return;
        }
        let k = subset.len();
        per_size[k - 1] = per_size[k - 1].max(inside);
        let replace = match &best {
            None => true,
            Some((w, s)) => better((inside, k), (*w, s.len())),
        };
        if replace {
            best = Some((inside, subset));
        }
    };
    let eval = |subset: &[usize]| {
        let mut member = vec![false; n];
        subset.iter().for_each(|&g| member[g] = true);
        inside_weight(graph, weights, &member)
    };

    let full: Vec<usize> = (0..n).collect();
    consider(full.clone(), eval(&full));
    for edge in graph.edges() {
        let mut s = edge.clone();
        s.sort_unstable();
        s.dedup();
        let w = eval(&s);
        consider(s, w);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let k = rng.random_range(1..=n);
        let mut s = sample(&mut rng, n, k).into_vec();
        s.sort_unstable();
        let w = eval(&s);
        consider(s, w);
    }

    // Greedy peeling: drop the vertex with the least inside weight touching it.
    let mut member = vec![true; n];
    let mut remaining = n;
    while remaining > 1 {
        let mut touch = vec![0i128; n];
        for (edge, w) in graph.edges().iter().zip(weights) {
            if edge.iter().all(|&g| member[g]) {
                for &g in edge {
                    touch[g] += w;
                }
            }
        }
        let drop = (0..n)
            .filter(|&g| member[g])
            .min_by_key(|&g| (touch[g], g))
            .expect("at least one member");
        member[drop] = false;
        remaining -= 1;
        let s: Vec<usize> = (0..n).filter(|&g| member[g]).collect();
        let w = inside_weight(graph, weights, &member);
        consider(s, w);
    }

    let (w, subset) = best.expect("full set considered");
    Ok(DensityReport {
        density: to_density(w, subset.len()),
        best_subset: subset,
        per_size: per_size
            .iter()
            .enumerate()
            .map(|(k, &w)| to_density(w, k + 1))
            .collect(),
    })
}
