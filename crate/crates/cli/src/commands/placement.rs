use harmony_core::placement::{
    cayley_symmetric, greedy_replica_counts_capped, monte_carlo_search, placement_density, random_placement,
    CayleyShape,
};
use harmony_core::{ClusterShape, Placement};

use super::{join, join_f64};
use crate::error::{CliError, CliResult};
use crate::io::{mean_expert_loads, read_trace, write_text};
use crate::PlacementArgs;

/// Largest `p` accepted by `--cayley`.
const MAX_CAYLEY_P: u32 = 16;

pub fn run(args: &PlacementArgs) -> CliResult<()> {
    let (shape, placement, label) = build(args)?;
    let mut text = placement.to_json();
    text.push('\n');
    write_text(&args.out, &text)?;
    println!(
        "placement: {label} ({} GPUs, {} experts, d = {})",
        shape.num_gpus, shape.num_experts, shape.d
    );
    println!("wrote: {}", args.out.display());
    if let Some(path) = &args.loads {
        let loads = mean_expert_loads(&read_trace(path, shape.num_experts, shape.num_gpus)?, shape.num_experts);
        let report = placement_density(&placement, &loads)?;
        println!("density: {:.6}", report.density);
        println!("densest_subset: {}", join(&report.best_subset));
        println!("per_size_density: {}", join_f64(&report.per_size));
    }
    Ok(())
}

fn build(args: &PlacementArgs) -> CliResult<(ClusterShape, Placement, String)> {
    if args.cayley {
        let (p, q) = (args.p.unwrap_or(0), args.q.unwrap_or(0));
        if p == 0 || p > MAX_CAYLEY_P || q >= p + 8 {
            return Err(CliError::usage(format!(
                "-p must be in 1..={MAX_CAYLEY_P} and -q below p + 8, got p = {p}, q = {q}; {}",
                harmony_core::placement::supported_cayley_shapes()
            )));
        }
        let cs = CayleyShape { p, q };
        let shape = cs.cluster(args.shape.gpus_per_node.unwrap_or(1 << p))?;
        let placement = cayley_symmetric(&shape)?;
        return Ok((shape, placement, format!("cayley p = {p}, q = {q}")));
    }
    let shape = args.shape.cluster()?;
    if args.random {
        let placement = random_placement(&shape, args.seed)?;
        return Ok((shape, placement, format!("random seed = {}", args.seed)));
    }
    let path = args.loads.as_ref().expect("clap requires --loads with --asymmetric");
    let loads = mean_expert_loads(&read_trace(path, shape.num_experts, shape.num_gpus)?, shape.num_experts);
    let counts = greedy_replica_counts_capped(&loads, shape.total_replicas(), shape.num_gpus)?;
    let search = monte_carlo_search(&loads, &counts, &shape, args.samples, args.seed)?;
    let worst = search.sample_densities.iter().copied().fold(f64::MIN, f64::max);
    println!("replica_counts: {}", join(&counts));
    println!(
        "samples: {}, best_density: {:.6}, worst_density: {worst:.6}",
        search.sample_densities.len(),
        search.density
    );
    Ok((
        shape,
        search.placement,
        format!("asymmetric seed = {}, samples = {}", args.seed, args.samples),
    ))
}
