use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cost::{CostModel, LayerBreakdown};
use super::workload::Workload;
use crate::adaptive::{evaluate_and_maybe_replace, Decision, LoadHistory, ReplacementEvent, ReplacementPolicy};
use crate::error::{Error, Result};
use crate::model::{ClusterShape, LoadMatrix, Placement, ReplicaLoadPlan, Topology};
use crate::placement::{is_identical_placement, validate_placement};
use crate::router::{build_transfer_plan, route_tokens, route_topology_aware, RouteRange, RoutingTable, TransferPlan};
use crate::scheduler::{integerize_plan, integerize_plan_balanced, Scheduler, SchedulerStats, SolveMode, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Fixed expert per EP group, no scheduling.
    VanillaEp,
    /// Scheduling across the replicas of an identical placement.
    MergedEp,
    Harmony,
    HarmonyCommAware,
    HarmonyPipelined,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::VanillaEp,
        Strategy::MergedEp,
        Strategy::Harmony,
        Strategy::HarmonyCommAware,
        Strategy::HarmonyPipelined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::VanillaEp => "vanilla_ep",
            Strategy::MergedEp => "merged_ep",
            Strategy::Harmony => "harmony",
            Strategy::HarmonyCommAware => "harmony_comm_aware",
            Strategy::HarmonyPipelined => "harmony_pipelined",
        }
    }

    /// Whether the strategy runs on arbitrary placements.
    pub fn is_harmony(self) -> bool {
        matches!(
            self,
            Strategy::Harmony | Strategy::HarmonyCommAware | Strategy::HarmonyPipelined
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MicrobatchMetrics {
    pub microbatch: usize,
    pub max_gpu_load: u64,
    pub balance_ratio: f64,
    pub a2a_intra: u64,
    pub a2a_inter: u64,
    pub local_volume: u64,
    pub layer_time: f64,
    pub breakdown: LayerBreakdown,
    /// A schedule ran and its latency was fully overlapped.
    pub schedule_time_hidden: bool,
    pub gpu_loads: Vec<u64>,
}

/// Outcome of one micro-batch before migration is charged.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// One table per dispatch phase (two under pipelining).
    pub tables: Vec<RoutingTable>,
    pub transfers: Vec<TransferPlan>,
    pub gpu_loads: Vec<u64>,
    pub breakdown: LayerBreakdown,
    pub schedule_time_hidden: bool,
}

/// Max over mean per-GPU load; 1.0 for an empty micro-batch.
pub fn load_balance_ratio(gpu_loads: &[u64]) -> f64 {
    let total: u64 = gpu_loads.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let max = gpu_loads.iter().copied().max().unwrap_or(0);
    max as f64 * gpu_loads.len() as f64 / total as f64
}

/// Per-strategy layer pipeline for one placement: schedule, round, route and
/// charge cost.
#[derive(Clone, Debug)]
pub struct StrategyRunner {
    strategy: Strategy,
    shape: ClusterShape,
    topology: Topology,
    cost: CostModel,
    placement: Placement,
    scheduler: Option<Scheduler>,
    /// Per-expert replica split used for the unscheduled part under pipelining.
    static_shares: Vec<Vec<f64>>,
}

impl StrategyRunner {
    pub fn new(strategy: Strategy, placement: Placement, shape: &ClusterShape, cost: &CostModel) -> Result<Self> {
        shape.validate()?;
        cost.validate()?;
        let violations = validate_placement(&placement, shape);
        if !violations.is_empty() {
            let listed: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Config(format!("invalid placement: {}", listed.join("; "))));
        }
        if !strategy.is_harmony() && !is_identical_placement(&placement, shape) {
            return Err(Error::Config(format!("{strategy} requires an identical placement")));
        }
        if strategy.is_harmony() && placement.d() < 2 {
            return Err(Error::Config(format!(
                "{strategy} requires d >= 2, got {}",
                placement.d()
            )));
        }
        let topology = shape.topology();
        let scheduler = match strategy {
            Strategy::VanillaEp => None,
            _ => Some(Scheduler::new(
                placement.clone(),
                topology,
                solve_options(strategy, &topology, cost),
            )?),
        };
        Ok(Self {
            strategy,
            shape: *shape,
            topology,
            cost: cost.clone(),
            placement,
            scheduler,
            static_shares: Vec::new(),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    /// Installs a regenerated placement; only the harmony strategies accept one.
    pub fn set_placement(&mut self, placement: Placement) -> Result<()> {
        if !self.strategy.is_harmony() {
            return Err(Error::Config(format!("{} cannot change its placement", self.strategy)));
        }
        let violations = validate_placement(&placement, &self.shape);
        if let Some(v) = violations.first() {
            return Err(Error::Placement(v.to_string()));
        }
        if let Some(s) = self.scheduler.as_mut() {
            s.set_placement(placement.clone());
        }
        self.placement = placement;
        self.static_shares.clear();
        Ok(())
    }

    pub fn scheduler_stats(&self) -> SchedulerStats {
        self.scheduler.as_ref().map(Scheduler::stats).unwrap_or_default()
    }

    pub fn step(&mut self, loads: &LoadMatrix) -> Result<StepOutcome> {
        loads.check_dims(self.shape.num_experts, self.shape.num_gpus)?;
        let tables = match self.strategy {
            Strategy::VanillaEp => vec![self.vanilla_table(loads)?],
            Strategy::MergedEp | Strategy::Harmony => vec![self.scheduled_table(loads, Vec::new(), false)?],
            Strategy::HarmonyCommAware => vec![self.scheduled_table(loads, Vec::new(), true)?],
            Strategy::HarmonyPipelined => self.pipelined_tables(loads)?,
        };
        let transfers = tables
            .iter()
            .map(|t| build_transfer_plan(t, &self.topology))
            .collect::<Result<Vec<_>>>()?;
        let mut gpu_loads = vec![0u64; self.shape.num_gpus];
        for r in tables.iter().flat_map(|t| &t.ranges) {
            gpu_loads[r.dst] += r.count;
        }
        let max_load = gpu_loads.iter().copied().max().unwrap_or(0);
        let phase_times: Vec<f64> = transfers.iter().map(|t| self.cost.comm_time(t)).collect();
        let dispatch: f64 = phase_times.iter().sum();
        let (schedule, hidden) = match self.strategy {
            Strategy::VanillaEp => (0.0, false),
            _ if self.cost.overlap_schedule => (0.0, true),
            Strategy::HarmonyPipelined => {
                let exposed = (self.cost.t_schedule - phase_times[0]).max(0.0);
                (exposed, exposed == 0.0)
            }
            _ => (self.cost.t_schedule, false),
        };
        Ok(StepOutcome {
            breakdown: LayerBreakdown {
                compute: max_load as f64 * self.cost.t_token,
                dispatch,
                combine: dispatch,
                schedule,
                migration: 0.0,
            },
            tables,
            transfers,
            gpu_loads,
            schedule_time_hidden: hidden,
        })
    }

    /// Tokens stay in their source's EP group: each expert serves them from
    /// its replica inside that group.
    fn vanilla_table(&self, loads: &LoadMatrix) -> Result<RoutingTable> {
        let ep = self.shape.ep_degree();
        let mut ranges = Vec::new();
        for e in 0..loads.num_experts() {
            for src in 0..loads.num_gpus() {
                let count = loads.get(e, src);
                if count == 0 {
                    continue;
                }
                let dst = *self
                    .placement
                    .group(e)
                    .iter()
                    .find(|&&g| g / ep == src / ep)
                    .ok_or_else(|| Error::Config(format!("expert {e} has no replica in EP group {}", src / ep)))?;
                ranges.push(RouteRange {
                    expert: e,
                    src,
                    dst,
                    count,
                });
            }
        }
        Ok(RoutingTable { ranges })
    }

    fn scheduled_table(&mut self, loads: &LoadMatrix, base: Vec<f64>, topology_routing: bool) -> Result<RoutingTable> {
        let scheduler = self.scheduler.as_mut().expect("scheduled strategy has a scheduler");
        let plan = integerize_plan_balanced(&scheduler.solve_with_base(loads, base)?)?;
        if topology_routing {
            route_topology_aware(&self.placement, loads, &plan, &self.topology)
        } else {
            route_tokens(&self.placement, loads, &plan)
        }
    }

    /// The first `1 - ratio` of each (expert, source) stream is routed
    /// without solving: each expert's fixed tokens are split across its
    /// replicas in the proportions of the previous micro-batch's assignment
    /// (evenly on the first one). The rest is scheduled on top of the load
    /// the fixed part creates.
    fn pipelined_tables(&mut self, loads: &LoadMatrix) -> Result<Vec<RoutingTable>> {
        let ratio = self.cost.pipeline_ratio;
        let (e_count, g_count) = (loads.num_experts(), loads.num_gpus());
        let mut fixed = LoadMatrix::zeros(e_count, g_count);
        let mut scheduled = LoadMatrix::zeros(e_count, g_count);
        for e in 0..e_count {
            for src in 0..g_count {
                let input = loads.get(e, src);
                let f = ((1.0 - ratio) * input as f64).floor() as u64;
                fixed.set(e, src, f);
                scheduled.set(e, src, input - f);
            }
        }
        let totals = fixed.expert_totals();
        let entries = (0..e_count)
            .map(|e| {
                let group = self.placement.group(e);
                let shares = self.static_shares.get(e).filter(|s| s.len() == group.len());
                group
                    .iter()
                    .enumerate()
                    .map(|(k, &g)| {
                        let share = shares.map_or(1.0 / group.len() as f64, |s| s[k]);
                        (g, totals[e] as f64 * share)
                    })
                    .collect()
            })
            .collect();
        let fixed_plan = integerize_plan(&ReplicaLoadPlan::from_entries(g_count, entries))?;
        let first = route_tokens(&self.placement, &fixed, &fixed_plan)?;
        let base = fixed_plan.gpu_loads();
        let second = self.scheduled_table(&scheduled, base, false)?;

        let mut assigned: Vec<Vec<f64>> = (0..e_count)
            .map(|e| fixed_plan.expert(e).iter().map(|&(_, x)| x).collect())
            .collect();
        for r in &second.ranges {
            let k = self
                .placement
                .group(r.expert)
                .iter()
                .position(|&g| g == r.dst)
                .expect("routed to a replica");
            assigned[r.expert][k] += r.count as f64;
        }
        self.static_shares = assigned
            .into_iter()
            .enumerate()
            .map(|(e, a)| {
                let total: f64 = a.iter().sum();
                if total > 0.0 {
                    a.into_iter().map(|x| x / total).collect()
                } else {
                    self.static_shares.get(e).cloned().unwrap_or_default()
                }
            })
            .collect();
        Ok(vec![first, second])
    }
}

fn solve_options(strategy: Strategy, topology: &Topology, cost: &CostModel) -> SolveOptions {
    let per_token = |a: f64| if cost.t_token > 0.0 { a / cost.t_token } else { a };
    match strategy {
        Strategy::HarmonyCommAware => {
            let mode = if topology.num_nodes() > 1 {
                SolveMode::TopologyAware
            } else {
                SolveMode::CommAware
            };
            SolveOptions {
                alpha: per_token(cost.alpha_intra),
                alpha_intra: per_token(cost.alpha_intra.min(cost.alpha_inter)),
                alpha_inter: per_token(cost.alpha_inter),
                ..SolveOptions::with_mode(mode)
            }
        }
        _ => SolveOptions::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub microbatches: usize,
    pub mean_balance_ratio: f64,
    pub p99_balance_ratio: f64,
    pub max_balance_ratio: f64,
    pub mean_layer_time: f64,
    pub lp_solves: u64,
    pub lp_iterations: u64,
    pub replacements: Vec<ReplacementEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<MicrobatchMetrics>,
    pub summary: RunSummary,
    pub final_placement: Placement,
}

/// Nearest-rank percentile of `values`; 0.0 when empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs every micro-batch of `workload` through `strategy`. With a policy,
/// the placement is re-evaluated every `check_interval` micro-batches using
/// the loads seen so far; `seed` drives candidate generation.
pub fn run_strategy(
    workload: &Workload,
    strategy: Strategy,
    placement: &Placement,
    shape: &ClusterShape,
    cost: &CostModel,
    policy: Option<&ReplacementPolicy>,
    seed: u64,
) -> Result<RunOutput> {
    workload.check_shape(shape)?;
    if let Some(p) = policy {
        if !strategy.is_harmony() {
            return Err(Error::Config(format!(
                "{strategy} does not support adaptive replacement"
            )));
        }
        p.validate()?;
    }
    let mut runner = StrategyRunner::new(strategy, placement.clone(), shape, cost)?;
    let mut history = LoadHistory::new(policy.map_or(1, |p| p.window))?;
    let mut events = Vec::new();
    let mut metrics = Vec::with_capacity(workload.len());
    for (i, loads) in workload.micro_batches.iter().enumerate() {
        let mut migration = 0.0;
        if let Some(p) = policy {
            if i > 0 && i % p.check_interval == 0 {
                let mc_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64;
                if let Decision::Replace {
                    placement,
                    cost,
                    old_m,
                    new_m,
                    changed_slots,
                } = evaluate_and_maybe_replace(runner.placement(), &history, p, shape, mc_seed)?
                {
                    runner.set_placement(placement)?;
                    migration = cost;
                    events.push(ReplacementEvent {
                        iteration: i,
                        old_m,
                        new_m,
                        changed_slots,
                        cost,
                    });
                }
            }
        }
        let step = runner.step(loads)?;
        if policy.is_some() {
            history.push_counts(&loads.expert_totals())?;
        }
        let breakdown = LayerBreakdown {
            migration,
            ..step.breakdown
        };
        metrics.push(MicrobatchMetrics {
            microbatch: i,
            max_gpu_load: step.gpu_loads.iter().copied().max().unwrap_or(0),
            balance_ratio: load_balance_ratio(&step.gpu_loads),
            a2a_intra: step.transfers.iter().map(TransferPlan::total_intra).sum(),
            a2a_inter: step.transfers.iter().map(TransferPlan::total_inter).sum(),
            local_volume: step.transfers.iter().map(TransferPlan::total_local).sum(),
            layer_time: breakdown.total(),
            breakdown,
            schedule_time_hidden: step.schedule_time_hidden,
            gpu_loads: step.gpu_loads,
        });
    }
    let ratios: Vec<f64> = metrics.iter().map(|m| m.balance_ratio).collect();
    let times: Vec<f64> = metrics.iter().map(|m| m.layer_time).collect();
    let stats = runner.scheduler_stats();
    Ok(RunOutput {
        summary: RunSummary {
            strategy,
            microbatches: metrics.len(),
            mean_balance_ratio: mean(&ratios),
            p99_balance_ratio: percentile(&ratios, 0.99),
            max_balance_ratio: ratios.iter().copied().fold(0.0, f64::max),
            mean_layer_time: mean(&times),
            lp_solves: stats.cold_solves + stats.warm_solves,
            lp_iterations: stats.iterations,
            replacements: events,
        },
        metrics,
        final_placement: runner.placement().clone(),
    })
}
