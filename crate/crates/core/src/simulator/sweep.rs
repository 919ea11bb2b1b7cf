use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::strategy::{mean, percentile, run_strategy, RunOutput, Strategy};
use super::workload::{gen_zipf_workload, Workload};
use crate::adaptive::ReplacementPolicy;
use crate::error::{Error, Result};
use crate::model::{ClusterShape, Placement};
use crate::placement::{cayley_symmetric, identical_placement, random_placement};

pub const METRICS_HEADER: &str =
    "strategy,s,seed,microbatch,max_load,balance_ratio,a2a_intra,a2a_inter,local,layer_time";

/// Placement used by the harmony strategies; vanilla and merged EP always
/// run on the identical placement.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementSpec {
    #[default]
    Cayley,
    Random {
        seed: u64,
    },
    /// Starts symmetric and regenerates under the adaptive policy.
    Asymmetric,
    Given {
        placement: Placement,
    },
}

impl PlacementSpec {
    pub fn initial(&self, shape: &ClusterShape) -> Result<Placement> {
        match self {
            PlacementSpec::Cayley => cayley_symmetric(shape),
            PlacementSpec::Random { seed } => random_placement(shape, *seed),
            PlacementSpec::Asymmetric => cayley_symmetric(shape).or_else(|_| random_placement(shape, 0)),
            PlacementSpec::Given { placement } => Ok(placement.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub shape: ClusterShape,
    pub s_values: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub tokens_per_gpu: u64,
    pub microbatches: usize,
    #[serde(default)]
    pub placement: PlacementSpec,
    #[serde(default)]
    pub cost: CostModel,
    /// Applied to the harmony strategies only.
    #[serde(default)]
    pub policy: Option<ReplacementPolicy>,
}

impl SweepConfig {
    /// Every problem, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.shape.validate() {
            out.push(format!("shape: {e}"));
        }
        if self.s_values.is_empty() {
            out.push("s_values must not be empty".into());
        }
        for s in &self.s_values {
            if !(s.is_finite() && *s >= 0.0) {
                out.push(format!("s_values: {s} is not a finite value >= 0"));
            }
        }
        if self.strategies.is_empty() {
            out.push("strategies must not be empty".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        if self.microbatches == 0 {
            out.push("microbatches must be at least 1".into());
        }
        if let Err(e) = self.cost.validate() {
            out.push(format!("cost: {e}"));
        }
        if let Some(Err(e)) = self.policy.as_ref().map(ReplacementPolicy::validate) {
            out.push(format!("policy: {e}"));
        }
        if out.is_empty() && self.strategies.iter().any(|s| s.is_harmony()) {
            if let Err(e) = self.placement.initial(&self.shape) {
                out.push(format!("placement: {e}"));
            }
        }
        if out.is_empty() && self.strategies.iter().any(|s| !s.is_harmony()) {
            if let Err(e) = identical_placement(&self.shape) {
                out.push(format!("identical placement: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub strategy: Strategy,
    pub s: f64,
    pub seed: u64,
    pub output: RunOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub s: f64,
    pub mean_balance_ratio: f64,
    pub p99_balance_ratio: f64,
    pub max_balance_ratio: f64,
    pub mean_layer_time: f64,
    pub lp_solves: u64,
    pub replacements: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Ordered by strategy, then s, then seed, as listed in the config.
    pub runs: Vec<SweepRun>,
    pub summary: Vec<SummaryRow>,
}

/// Worker count: `HARMONY_THREADS` if set and positive, else the available
/// parallelism, never more than `jobs`.
pub fn worker_count(jobs: usize) -> usize {
    let wanted = std::env::var("HARMONY_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    wanted.min(jobs).max(1)
}

pub fn run_skew_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut cases = Vec::new();
    for &s in &config.s_values {
        for &seed in &config.seeds {
            let workload = gen_zipf_workload(&config.shape, s, config.tokens_per_gpu, config.microbatches, seed)?;
            cases.push(Case { s, seed, workload });
        }
    }
    let runs = run_cases(
        &config.shape,
        &config.strategies,
        &config.placement,
        &config.cost,
        config.policy.as_ref(),
        &cases,
    )?;
    let summary = summarize(&runs, config.seeds.len());
    Ok(SweepResult { runs, summary })
}

/// Runs every strategy over one recorded workload. Rows carry `s = NaN`
/// and seed 0; the metrics CSV prints `trace` in the `s` column.
pub fn run_trace_sweep(
    shape: &ClusterShape,
    strategies: &[Strategy],
    placement: &PlacementSpec,
    cost: &CostModel,
    policy: Option<&ReplacementPolicy>,
    workload: &Workload,
) -> Result<SweepResult> {
    if strategies.is_empty() {
        return Err(Error::Config("strategies must not be empty".into()));
    }
    let cases = [Case {
        s: f64::NAN,
        seed: 0,
        workload: workload.clone(),
    }];
    let runs = run_cases(shape, strategies, placement, cost, policy, &cases)?;
    let summary = summarize(&runs, 1);
    Ok(SweepResult { runs, summary })
}

struct Case {
    s: f64,
    seed: u64,
    workload: Workload,
}

fn policy_for(
    strategy: Strategy,
    placement: &PlacementSpec,
    policy: Option<&ReplacementPolicy>,
) -> Option<ReplacementPolicy> {
    if !strategy.is_harmony() {
        return None;
    }
    match (placement, policy) {
        (_, Some(p)) => Some(p.clone()),
        (PlacementSpec::Asymmetric, None) => Some(ReplacementPolicy::default()),
        _ => None,
    }
}

fn run_cases(
    shape: &ClusterShape,
    strategies: &[Strategy],
    spec: &PlacementSpec,
    cost: &CostModel,
    policy: Option<&ReplacementPolicy>,
    cases: &[Case],
) -> Result<Vec<SweepRun>> {
    let harmony_placement = if strategies.iter().any(|s| s.is_harmony()) {
        Some(spec.initial(shape)?)
    } else {
        None
    };
    let identical = if strategies.iter().any(|s| !s.is_harmony()) {
        Some(identical_placement(shape)?)
    } else {
        None
    };
    let per_strategy = cases.len();
    let jobs = strategies.len() * per_strategy;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    let work = || loop {
        let job = next.fetch_add(1, Ordering::Relaxed);
        if job >= jobs {
            break;
        }
        let strategy = strategies[job / per_strategy];
        let case = &cases[job % per_strategy];
        let placement = if strategy.is_harmony() {
            harmony_placement.as_ref()
        } else {
            identical.as_ref()
        }
        .expect("placement prepared for every listed strategy");
        let policy = policy_for(strategy, spec, policy);
        let out = run_strategy(
            &case.workload,
            strategy,
            placement,
            shape,
            cost,
            policy.as_ref(),
            case.seed,
        );
        results.lock().expect("no worker panicked")[job] = Some(out);
    };
    let workers = worker_count(jobs);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .enumerate()
        .map(|(job, out)| {
            let case = &cases[job % per_strategy];
            Ok(SweepRun {
                strategy: strategies[job / per_strategy],
                s: case.s,
                seed: case.seed,
                output: out.expect("every job ran")?,
            })
        })
        .collect()
}

fn summarize(runs: &[SweepRun], seeds: usize) -> Vec<SummaryRow> {
    runs.chunks(seeds)
        .map(|group| {
            let ratios: Vec<f64> = group
                .iter()
                .flat_map(|r| r.output.metrics.iter().map(|m| m.balance_ratio))
                .collect();
            let times: Vec<f64> = group
                .iter()
                .flat_map(|r| r.output.metrics.iter().map(|m| m.layer_time))
                .collect();
            SummaryRow {
                strategy: group[0].strategy,
                s: group[0].s,
                mean_balance_ratio: round6(mean(&ratios)),
                p99_balance_ratio: round6(percentile(&ratios, 0.99)),
                max_balance_ratio: round6(ratios.iter().copied().fold(0.0, f64::max)),
                mean_layer_time: round6(mean(&times)),
                lp_solves: group.iter().map(|r| r.output.summary.lp_solves).sum(),
                replacements: group.iter().map(|r| r.output.summary.replacements.len()).sum(),
            }
        })
        .collect()
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn metrics_csv(result: &SweepResult) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for run in &result.runs {
        let s_label = if run.s.is_nan() {
            "trace".to_string()
        } else {
            format!("{:.6}", run.s)
        };
        for m in &run.output.metrics {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                run.strategy,
                s_label,
                run.seed,
                m.microbatch,
                m.max_gpu_load as f64,
                m.balance_ratio,
                m.a2a_intra as f64,
                m.a2a_inter as f64,
                m.local_volume as f64,
                m.layer_time
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn summary_json(result: &SweepResult) -> String {
    let mut text = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(strategies: Vec<Strategy>, s_values: Vec<f64>) -> SweepConfig {
        SweepConfig {
            shape: ClusterShape::new(8, 32, 2, 8).unwrap(),
            s_values,
            strategies,
            seeds: vec![1, 2],
            tokens_per_gpu: 256,
            microbatches: 4,
            placement: PlacementSpec::Cayley,
            cost: CostModel::default(),
            policy: None,
        }
    }

    #[test]
    fn uniform_skew_is_balanced_for_all_strategies() {
        let result = run_skew_sweep(&config(Strategy::ALL.to_vec(), vec![0.0])).unwrap();
        assert_eq!(result.summary.len(), 5);
        for row in &result.summary {
            assert!(row.mean_balance_ratio < 1.3, "{row:?}");
        }
    }

    #[test]
    fn harmony_dominates_vanilla_per_seed() {
        let result = run_skew_sweep(&config(vec![Strategy::VanillaEp, Strategy::Harmony], vec![1.0])).unwrap();
        let (vanilla, harmony) = result.runs.split_at(2);
        for (v, h) in vanilla.iter().zip(harmony) {
            assert_eq!(v.seed, h.seed);
            for (a, b) in v.output.metrics.iter().zip(&h.output.metrics) {
                assert!(b.max_gpu_load <= a.max_gpu_load);
            }
        }
    }

    #[test]
    fn vanilla_only_never_solves() {
        let result = run_skew_sweep(&config(vec![Strategy::VanillaEp], vec![0.5, 1.0])).unwrap();
        assert!(result.summary.iter().all(|r| r.lp_solves == 0));
    }

    #[test]
    fn csv_layout_and_determinism() {
        let cfg = config(vec![Strategy::Harmony], vec![0.6]);
        let a = metrics_csv(&run_skew_sweep(&cfg).unwrap());
        let b = metrics_csv(&run_skew_sweep(&cfg).unwrap());
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[..4], ["harmony", "0.600000", "1", "0"]);
        assert_eq!(a.lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn config_problems_are_all_reported() {
        let mut cfg = config(vec![], vec![-1.0]);
        cfg.seeds.clear();
        cfg.microbatches = 0;
        let problems = cfg.problems();
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"shape":{"num_gpus":8,"num_experts":32,"d":2,"gpus_per_node":8},
            "s_values":[1.0],"strategies":["harmony"],"seeds":[0],"tokens_per_gpu":8,
            "microbatches":1,"colour":"blue"}"#;
        assert!(serde_json::from_str::<SweepConfig>(text).is_err());
    }
}
