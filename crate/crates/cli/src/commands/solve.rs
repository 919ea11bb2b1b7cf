use harmony_core::placement::validate_placement;
use harmony_core::router::{route_tokens, route_topology_aware};
use harmony_core::scheduler::{
    comm_plan_stats, integerize_plan_balanced, solve_comm_aware, solve_replica_loads, SolveMode, SolveOptions,
};
use harmony_core::{balance_ratio_of, ClusterShape, LoadMatrix, Placement, Topology};

use super::join_f64;
use crate::error::{CliError, CliResult};
use crate::io::{read_text, read_trace, write_text};
use crate::{Mode, SolveArgs};

pub fn run(args: &SolveArgs) -> CliResult<()> {
    let placement =
        Placement::from_json(&read_text(&args.placement)?).map_err(|e| CliError::from(e).in_file(&args.placement))?;
    let (e_count, g_count) = (placement.num_experts(), placement.num_gpus());
    let dims = ClusterShape {
        num_gpus: g_count,
        num_experts: e_count,
        d: placement.d(),
        gpus_per_node: g_count,
    };
    let violations = validate_placement(&placement, &dims);
    if !violations.is_empty() {
        let listed: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(CliError::usage(format!(
            "{}: {}",
            args.placement.display(),
            listed.join("; ")
        )));
    }
    let trace = read_trace(&args.loads, e_count, g_count)?;
    let loads = match trace.micro_batches.get(args.microbatch) {
        Some(mb) => mb.clone(),
        None if trace.is_empty() && args.microbatch == 0 => LoadMatrix::zeros(e_count, g_count),
        None => {
            return Err(CliError::usage(format!(
                "{}: micro-batch {} requested, trace has {}",
                args.loads.display(),
                args.microbatch,
                trace.len()
            )))
        }
    };
    let topology = Topology::new(g_count, args.gpus_per_node.unwrap_or(g_count))?;
    let options = SolveOptions {
        mode: match args.mode {
            Mode::Balance => SolveMode::BalanceOnly,
            Mode::CommAware => SolveMode::CommAware,
            Mode::TopologyAware => SolveMode::TopologyAware,
        },
        alpha: args.alpha,
        alpha_intra: args.alpha_intra,
        alpha_inter: args.alpha_inter,
        ..SolveOptions::default()
    };
    let plan = match options.mode {
        SolveMode::BalanceOnly => solve_replica_loads(&placement, &loads, &options)?.0,
        _ => solve_comm_aware(&placement, &loads, &topology, &options)?.0,
    };
    let stats = comm_plan_stats(&placement, &loads, &plan, &topology, &[])?;
    let rounded = integerize_plan_balanced(&plan)?;
    let table = match options.mode {
        SolveMode::TopologyAware => route_topology_aware(&placement, &loads, &rounded, &topology)?,
        _ => route_tokens(&placement, &loads, &rounded)?,
    };
    write_text(&args.routing, &table.to_csv())?;

    let gpu_loads = plan.gpu_loads();
    let routed: Vec<f64> = rounded.gpu_loads();
    println!("m: {:.6}", stats.comp);
    println!("objective: {:.6}", stats.objective(&options));
    match balance_ratio_of(&gpu_loads) {
        Ok(r) => println!("balance_ratio: {r:.6}"),
        Err(_) => println!("balance_ratio: undefined (zero load)"),
    }
    println!("gpu_loads: {}", join_f64(&gpu_loads));
    println!("routed_gpu_loads: {}", join_f64(&routed));
    println!("max_send: {:.6}", stats.send.iter().copied().fold(0.0, f64::max));
    println!("max_recv: {:.6}", stats.recv.iter().copied().fold(0.0, f64::max));
    println!("total_remote: {:.6}", stats.send.iter().sum::<f64>());
    println!("total_local: {:.6}", stats.local.iter().sum::<f64>());
    println!("inter_node: {:.6}", stats.node_send.iter().sum::<f64>());
    println!("routing_ranges: {}", table.ranges.len());
    println!("wrote: {}", args.routing.display());
    Ok(())
}
