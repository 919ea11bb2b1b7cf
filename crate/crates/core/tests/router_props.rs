use harmony_core::router::{build_transfer_plan, route_tokens, route_topology_aware, RoutingTable};
use harmony_core::scheduler::{integerize_plan, solve_replica_loads, SolveOptions};
use harmony_core::{LoadMatrix, Placement, ReplicaLoadPlan, Topology};
use proptest::prelude::*;

fn case() -> impl Strategy<Value = (Placement, LoadMatrix, ReplicaLoadPlan)> {
    (4usize..=8, 2usize..=12, 2usize..=3).prop_flat_map(|(g, e, d)| {
        let groups = prop::collection::vec(prop::sample::subsequence((0..g).collect::<Vec<_>>(), d), e);
        let rows = prop::collection::vec(prop::collection::vec(0u64..=20, g), e);
        (groups, rows).prop_map(move |(groups, rows)| {
            let placement = Placement::new(g, d, groups, (0..e).collect()).unwrap();
            let loads = LoadMatrix::from_rows(rows).unwrap();
            let (plan, _) = solve_replica_loads(&placement, &loads, &SolveOptions::default()).unwrap();
            let plan = integerize_plan(&plan).unwrap();
            (placement, loads, plan)
        })
    })
}

fn check_conservation(table: &RoutingTable, loads: &LoadMatrix, plan: &ReplicaLoadPlan) -> Result<(), TestCaseError> {
    let (e, g) = (loads.num_experts(), loads.num_gpus());
    let mut from = vec![0u64; e * g];
    let mut to = vec![0u64; e * g];
    for r in &table.ranges {
        prop_assert!(r.count > 0);
        from[r.expert * g + r.src] += r.count;
        to[r.expert * g + r.dst] += r.count;
    }
    for ex in 0..e {
        for gpu in 0..g {
            prop_assert_eq!(from[ex * g + gpu], loads.get(ex, gpu));
            prop_assert_eq!(to[ex * g + gpu], plan.get(ex, gpu) as u64);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn routing_conserves_and_maximizes_locality((placement, loads, plan) in case()) {
        let table = route_tokens(&placement, &loads, &plan).unwrap();
        check_conservation(&table, &loads, &plan)?;
        let bound: u64 = (0..loads.num_experts())
            .flat_map(|e| (0..loads.num_gpus()).map(move |g| (e, g)))
            .map(|(e, g)| (plan.get(e, g) as u64).min(loads.get(e, g)))
            .sum();
        prop_assert_eq!(table.local_volume(), bound);
    }

    #[test]
    fn routing_is_pure((placement, loads, plan) in case()) {
        let a = route_tokens(&placement, &loads, &plan).unwrap();
        let b = route_tokens(&placement, &loads, &plan).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(RoutingTable::read_csv(a.to_csv().as_bytes()).unwrap(), a);
    }

    /// Ranges of one (expert, src) are contiguous and never revisit a destination.
    #[test]
    fn ranges_grouped_in_sweep_order((placement, loads, plan) in case()) {
        let table = route_tokens(&placement, &loads, &plan).unwrap();
        let keys: Vec<(usize, usize)> = table.ranges.iter().map(|r| (r.expert, r.src)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(&keys, &sorted);
        for w in table.ranges.windows(2) {
            if (w[0].expert, w[0].src) == (w[1].expert, w[1].src) {
                prop_assert_ne!(w[0].dst, w[1].dst);
            }
        }
        for r in &table.ranges {
            prop_assert!(placement.hosts(r.expert, r.dst));
        }
    }

    #[test]
    fn topology_routing_conserves((placement, loads, plan) in case()) {
        let g = placement.num_gpus();
        let topo = Topology::new(g, if g % 2 == 0 { g / 2 } else { g }).unwrap();
        let table = route_topology_aware(&placement, &loads, &plan, &topo).unwrap();
        check_conservation(&table, &loads, &plan)?;
        let plain = build_transfer_plan(&route_tokens(&placement, &loads, &plan).unwrap(), &topo).unwrap();
        let aware = build_transfer_plan(&table, &topo).unwrap();
        prop_assert_eq!(aware.total_local(), plain.total_local());
        prop_assert!(aware.total_inter() <= plain.total_inter());
        prop_assert_eq!(aware.send.iter().sum::<u64>(), aware.recv.iter().sum::<u64>());
    }
}
