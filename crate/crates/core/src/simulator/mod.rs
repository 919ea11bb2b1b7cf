//! Micro-batch simulator: synthesize or replay expert loads, run each
//! micro-batch through a balancing strategy and charge a simple cost model.

mod cost;
mod strategy;
mod sweep;
mod workload;

pub use cost::{CostModel, LayerBreakdown};
pub use strategy::{
    load_balance_ratio, mean, percentile, run_strategy, MicrobatchMetrics, RunOutput, RunSummary, StepOutcome,
    Strategy, StrategyRunner,
};
pub use sweep::{
    metrics_csv, run_skew_sweep, run_trace_sweep, summary_json, worker_count, PlacementSpec, SummaryRow, SweepConfig,
    SweepResult, SweepRun, METRICS_HEADER,
};
pub use workload::{
    gen_zipf_workload, load_trace, parse_trace, parse_trace_dims, zipf_ranking, zipf_shares, Workload, WorkloadSource,
};
