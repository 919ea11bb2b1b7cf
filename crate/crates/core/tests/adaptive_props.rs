use harmony_core::adaptive::{evaluate_and_maybe_replace, Decision, LoadHistory, ReplacementPolicy};
use harmony_core::placement::{cayley_symmetric, placement_density};
use harmony_core::simulator::{gen_zipf_workload, run_strategy, CostModel, Strategy};
use harmony_core::ClusterShape;

fn shape() -> ClusterShape {
    ClusterShape::new(8, 32, 2, 8).unwrap()
}

fn skewed_history(s: f64, seed: u64) -> LoadHistory {
    let w = gen_zipf_workload(&shape(), s, 2048, 8, seed).unwrap();
    let mut h = LoadHistory::new(8).unwrap();
    for mb in &w.micro_batches {
        h.push_counts(&mb.expert_totals()).unwrap();
    }
    h
}

#[test]
fn replacement_never_raises_predicted_density() {
    let current = cayley_symmetric(&shape()).unwrap();
    let policy = ReplacementPolicy {
        threshold: 1.0,
        mc_samples: 30,
        ..ReplacementPolicy::default()
    };
    for seed in 0..6 {
        let h = skewed_history(0.6 + 0.3 * seed as f64, seed);
        let predicted = harmony_core::adaptive::predict_loads(&h).unwrap();
        let old = placement_density(&current, &predicted).unwrap().density;
        if let Decision::Replace {
            placement,
            new_m,
            old_m,
            ..
        } = evaluate_and_maybe_replace(&current, &h, &policy, &shape(), seed).unwrap()
        {
            assert_eq!(old_m, old);
            assert!(new_m < old_m);
            assert_eq!(placement_density(&placement, &predicted).unwrap().density, new_m);
        }
    }
}

#[test]
fn decisions_are_deterministic() {
    let current = cayley_symmetric(&shape()).unwrap();
    let h = skewed_history(1.5, 4);
    let policy = ReplacementPolicy::default();
    let a = evaluate_and_maybe_replace(&current, &h, &policy, &shape(), 11).unwrap();
    let b = evaluate_and_maybe_replace(&current, &h, &policy, &shape(), 11).unwrap();
    assert_eq!(a, b);
    assert!(matches!(a, Decision::Replace { .. }));
}

#[test]
fn stationary_workload_replaces_at_most_once() {
    let placement = cayley_symmetric(&shape()).unwrap();
    let policy = ReplacementPolicy::default();
    for s in [1.25, 2.0] {
        let w = gen_zipf_workload(&shape(), s, 2048, 60, 2).unwrap();
        let out = run_strategy(
            &w,
            Strategy::Harmony,
            &placement,
            &shape(),
            &CostModel::default(),
            Some(&policy),
            2,
        )
        .unwrap();
        let events = &out.summary.replacements;
        assert_eq!(events.len(), 1, "s = {s}: {events:?}");
        let ev = &events[0];
        assert_eq!(out.metrics[ev.iteration].breakdown.migration, ev.cost);
        assert_eq!(ev.cost, policy.migration_cost * ev.changed_slots as f64);
        assert!(out
            .metrics
            .iter()
            .enumerate()
            .all(|(i, m)| i == ev.iteration || m.breakdown.migration == 0.0));
    }
}

#[test]
fn moderate_skew_keeps_symmetric_placement() {
    let placement = cayley_symmetric(&shape()).unwrap();
    let w = gen_zipf_workload(&shape(), 0.4, 2048, 40, 1).unwrap();
    let out = run_strategy(
        &w,
        Strategy::Harmony,
        &placement,
        &shape(),
        &CostModel::default(),
        Some(&ReplacementPolicy::default()),
        1,
    )
    .unwrap();
    assert!(out.summary.replacements.is_empty());
    assert_eq!(out.final_placement, placement);
}
