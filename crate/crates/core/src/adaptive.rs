//! Adaptive replacement: track expert loads, predict the next distribution
//! with a moving average, and regenerate the placement when the predicted
//! balance ratio exceeds a threshold.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterShape, Placement};
use crate::placement::{greedy_replica_counts_capped, monte_carlo_search, placement_density};

/// The most recent `capacity` per-micro-batch expert-load vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadHistory {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl LoadHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidOption("history window must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, loads: Vec<f64>) -> Result<()> {
        if let Some(first) = self.entries.front() {
            if first.len() != loads.len() {
                return Err(Error::Dimension(format!(
                    "history holds {} experts, got {}",
                    first.len(),
                    loads.len()
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(loads);
        Ok(())
    }

    pub fn push_counts(&mut self, loads: &[u64]) -> Result<()> {
        self.push(loads.iter().map(|&l| l as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}

/// Per-expert arithmetic mean over the history window.
pub fn predict_loads(history: &LoadHistory) -> Result<Vec<f64>> {
    let first = history.entries.front().ok_or(Error::NoData("empty load history"))?;
    let mut sum = vec![0.0; first.len()];
    for entry in &history.entries {
        for (s, v) in sum.iter_mut().zip(entry) {
            *s += v;
        }
    }
    let n = history.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplacementPolicy {
    /// Micro-batches between evaluations.
    pub check_interval: usize,
    /// Largest tolerated predicted balance ratio.
    pub threshold: f64,
    /// Moving-average window.
    pub window: usize,
    /// Simulated time per replica slot whose (expert, GPU) assignment changes.
    pub migration_cost: f64,
    /// Candidates drawn per regeneration.
    pub mc_samples: usize,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            check_interval: 10,
            threshold: 1.1,
            window: 8,
            // A full 64-slot replacement costs 300 000 units (300 ms at 1 unit = 1 us).
            migration_cost: 300_000.0 / 64.0,
            mc_samples: 200,
        }
    }
}

impl ReplacementPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.check_interval == 0 {
            problems.push("check_interval must be at least 1".to_string());
        }
        if self.window == 0 {
            problems.push("window must be at least 1".to_string());
        }
        if self.threshold.is_nan() || self.threshold < 1.0 {
            problems.push(format!("threshold must be >= 1.0, got {}", self.threshold));
        }
        if !self.migration_cost.is_finite() || self.migration_cost < 0.0 {
            problems.push(format!(
                "migration_cost must be finite and >= 0, got {}",
                self.migration_cost
            ));
        }
        if self.mc_samples == 0 {
            problems.push("mc_samples must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidOption(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Keep {
        predicted_m: f64,
        predicted_ratio: f64,
    },
    Replace {
        placement: Placement,
        cost: f64,
        old_m: f64,
        new_m: f64,
        changed_slots: usize,
    },
}

/// One replacement, as logged in the JSON-lines event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementEvent {
    pub iteration: usize,
    pub old_m: f64,
    pub new_m: f64,
    pub changed_slots: usize,
    pub cost: f64,
}

impl ReplacementEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Number of `(expert, gpu)` replicas in `new` that `old` does not have.
pub fn changed_replicas(old: &Placement, new: &Placement) -> usize {
    let mut remaining: HashMap<(usize, usize), usize> = HashMap::new();
    for pair in old.replica_pairs() {
        *remaining.entry(pair).or_default() += 1;
    }
    let mut changed = 0;
    for pair in new.replica_pairs() {
        match remaining.get_mut(&pair) {
            Some(n) if *n > 0 => *n -= 1,
            _ => changed += 1,
        }
    }
    changed
}

pub fn evaluate_and_maybe_replace(
    current: &Placement,
    history: &LoadHistory,
    policy: &ReplacementPolicy,
    shape: &ClusterShape,
    seed: u64,
) -> Result<Decision> {
    policy.validate()?;
    let predicted = predict_loads(history)?;
    let total: f64 = predicted.iter().sum();
    if total <= 0.0 {
        return Ok(Decision::Keep {
            predicted_m: 0.0,
            predicted_ratio: 1.0,
        });
    }
    let old_m = placement_density(current, &predicted)?.density;
    let ratio = old_m / (total / shape.num_gpus as f64);
    if ratio <= policy.threshold {
        return Ok(Decision::Keep {
            predicted_m: old_m,
            predicted_ratio: ratio,
        });
    }
    let slots = shape.num_gpus * shape.slots_per_gpu();
    let counts = greedy_replica_counts_capped(&predicted, slots, shape.num_gpus)?;
    let search = monte_carlo_search(&predicted, &counts, shape, policy.mc_samples, seed)?;
    if search.density >= old_m {
        return Ok(Decision::Keep {
            predicted_m: old_m,
            predicted_ratio: ratio,
        });
    }
    let changed_slots = changed_replicas(current, &search.placement);
    Ok(Decision::Replace {
        cost: policy.migration_cost * changed_slots as f64,
        placement: search.placement,
        old_m,
        new_m: search.density,
        changed_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{cayley_symmetric, identical_placement};

    fn history(entries: &[&[f64]], window: usize) -> LoadHistory {
        let mut h = LoadHistory::new(window).unwrap();
        for e in entries {
            h.push(e.to_vec()).unwrap();
        }
        h
    }

    #[test]
    fn moving_average() {
        assert_eq!(predict_loads(&history(&[&[10.0, 2.0]], 4)).unwrap(), vec![10.0, 2.0]);
        assert_eq!(
            predict_loads(&history(&[&[10.0, 2.0], &[14.0, 6.0]], 2)).unwrap(),
            vec![12.0, 4.0]
        );
        assert_eq!(
            predict_loads(&history(&[&[3.0, 3.0][..]; 5], 3)).unwrap(),
            vec![3.0, 3.0]
        );
        // The window drops the oldest entry.
        assert_eq!(
            predict_loads(&history(&[&[100.0], &[2.0], &[4.0]], 2)).unwrap(),
            vec![3.0]
        );
        assert!(matches!(
            predict_loads(&LoadHistory::new(2).unwrap()),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn uniform_loads_keep_symmetric_placement() {
        let shape = ClusterShape::new(8, 8, 2, 8).unwrap();
        let p = cayley_symmetric(&shape).unwrap();
        let h = history(&[&[5.0; 8]], 8);
        let d = evaluate_and_maybe_replace(&p, &h, &ReplacementPolicy::default(), &shape, 0).unwrap();
        assert!(matches!(d, Decision::Keep { predicted_ratio, .. } if (predicted_ratio - 1.0).abs() < 1e-12));
    }

    #[test]
    fn skewed_identical_placement_is_replaced() {
        let shape = ClusterShape::new(4, 4, 2, 4).unwrap();
        let p = identical_placement(&shape).unwrap();
        let h = history(&[&[4.0, 6.0, 14.0, 8.0]], 8);
        let policy = ReplacementPolicy {
            threshold: 1.05,
            ..ReplacementPolicy::default()
        };
        match evaluate_and_maybe_replace(&p, &h, &policy, &shape, 1).unwrap() {
            Decision::Replace {
                old_m,
                new_m,
                cost,
                changed_slots,
                ..
            } => {
                assert_eq!(old_m, 11.0);
                assert!(new_m < old_m);
                assert_eq!(cost, policy.migration_cost * changed_slots as f64);
            }
            other => panic!("expected replacement, got {other:?}"),
        }
        let never = ReplacementPolicy {
            threshold: f64::INFINITY,
            ..ReplacementPolicy::default()
        };
        assert!(matches!(
            evaluate_and_maybe_replace(&p, &h, &never, &shape, 1).unwrap(),
            Decision::Keep { .. }
        ));
    }

    #[test]
    fn policy_validation_lists_every_problem() {
        let bad = ReplacementPolicy {
            check_interval: 0,
            window: 0,
            threshold: 0.5,
            ..ReplacementPolicy::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("check_interval") && msg.contains("window") && msg.contains("threshold"));
    }

    #[test]
    fn changed_replicas_counts_new_pairs() {
        let a = Placement::new(4, 2, vec![vec![0, 1], vec![2, 3]], vec![0, 0]).unwrap();
        let b = Placement::new(4, 2, vec![vec![0, 2], vec![2, 3]], vec![0, 1]).unwrap();
        assert_eq!(changed_replicas(&a, &a), 0);
        assert_eq!(changed_replicas(&a, &b), 1);
    }

    #[test]
    fn event_json_line() {
        let ev = ReplacementEvent {
            iteration: 10,
            old_m: 11.0,
            new_m: 8.0,
            changed_slots: 3,
            cost: 1.5,
        };
        assert_eq!(
            ev.to_json_line(),
            r#"{"iteration":10,"old_m":11.0,"new_m":8.0,"changed_slots":3,"cost":1.5}"#
        );
    }
}
