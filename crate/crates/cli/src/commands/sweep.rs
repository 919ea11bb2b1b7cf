use serde_json::json;

use harmony_core::simulator::{load_trace, metrics_csv, run_skew_sweep, run_trace_sweep, summary_json, SweepResult};

use crate::config::{parse_run_config, Overrides, RunConfig, WorkloadConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_text, write_text};
use crate::SweepArgs;

pub fn run(args: &SweepArgs) -> CliResult<()> {
    let overrides = Overrides {
        strategies: args.strategies.clone(),
        seeds: args.seeds.clone(),
        s_values: args.s_values.clone(),
        microbatches: args.microbatches,
        tokens_per_gpu: args.tokens_per_gpu,
        output_dir: args.out.clone(),
    };
    let config = parse_run_config(&read_text(&args.config)?, &overrides).map_err(|e| e.in_file(&args.config))?;
    let result = execute(&config)?;

    let dir = &config.output_dir;
    write_text(&dir.join("metrics.csv"), &metrics_csv(&result))?;
    write_text(&dir.join("summary.json"), &summary_json(&result))?;
    write_text(&dir.join("events.jsonl"), &events_jsonl(&result))?;

    println!(
        "{:<20} {:>8} {:>12} {:>12} {:>12} {:>16} {:>10} {:>12}",
        "strategy", "s", "mean_ratio", "p99_ratio", "max_ratio", "mean_layer_time", "lp_solves", "replacements"
    );
    for row in &result.summary {
        let s = if row.s.is_nan() {
            "trace".to_string()
        } else {
            format!("{:.6}", row.s)
        };
        println!(
            "{:<20} {:>8} {:>12.6} {:>12.6} {:>12.6} {:>16.6} {:>10} {:>12}",
            row.strategy.name(),
            s,
            row.mean_balance_ratio,
            row.p99_balance_ratio,
            row.max_balance_ratio,
            row.mean_layer_time,
            row.lp_solves,
            row.replacements
        );
    }
    println!("lp_solves: {}", result.summary.iter().map(|r| r.lp_solves).sum::<u64>());
    println!("wrote: {}", dir.display());
    Ok(())
}

fn execute(config: &RunConfig) -> CliResult<SweepResult> {
    match &config.workload {
        WorkloadConfig::Zipf { .. } => Ok(run_skew_sweep(&config.sweep_config())?),
        WorkloadConfig::Trace { path } => {
            let workload = load_trace(path, &config.shape).map_err(|e| CliError::from(e).in_file(path))?;
            Ok(run_trace_sweep(
                &config.shape,
                &config.strategies,
                &config.placement,
                &config.cost,
                config.policy.as_ref(),
                &workload,
            )?)
        }
    }
}

/// One JSON object per placement replacement, keyed by run.
fn events_jsonl(result: &SweepResult) -> String {
    let mut out = String::new();
    for run in &result.runs {
        for ev in &run.output.summary.replacements {
            let line = json!({
                "strategy": run.strategy,
                "s": run.s,
                "seed": run.seed,
                "iteration": ev.iteration,
                "old_m": ev.old_m,
                "new_m": ev.new_m,
                "changed_slots": ev.changed_slots,
                "cost": ev.cost,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}
