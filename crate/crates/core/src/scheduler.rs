//! Per-micro-batch replica-load optimization.
//!
//! The balance-only problem minimizes the maximum GPU load subject to every
//! expert's tokens being spread over its EDP group. The communication-aware
//! variants add a weighted communication term, linearized with auxiliary
//! locality variables `l_e^g <= min(x_e^g, input_e^g)`.
//!
//! Among optimal plans the lexicographically smallest one in (expert id,
//! GPU id) order is returned, so every caller with identical inputs gets the
//! same plan regardless of warm or cold solving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoadMatrix, Placement, ReplicaLoadPlan, Topology};
use crate::simplex::{LpBuilder, RowKind, Tableau, INF};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    BalanceOnly,
    CommAware,
    TopologyAware,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub mode: SolveMode,
    /// Weight of the communication term in comm-aware mode.
    pub alpha: f64,
    /// Weight of per-GPU off-GPU traffic in topology-aware mode.
    pub alpha_intra: f64,
    /// Weight of per-node inter-node traffic in topology-aware mode.
    pub alpha_inter: f64,
    pub tolerance: f64,
    /// Run the lexicographic tie-break pass.
    pub lexicographic: bool,
    /// `(expert, gpu)` replica loads forced to zero.
    pub pinned_zero: Vec<(usize, usize)>,
    /// Constant per-GPU load added to every GPU's load expression (empty for none).
    pub base_loads: Vec<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mode: SolveMode::BalanceOnly,
            alpha: 0.1,
            alpha_intra: 0.1,
            alpha_inter: 1.0,
            tolerance: 1e-9,
            lexicographic: true,
            pinned_zero: Vec::new(),
            base_loads: Vec::new(),
        }
    }
}

impl SolveOptions {
    pub fn with_mode(mode: SolveMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("alpha_intra", self.alpha_intra),
            ("alpha_inter", self.alpha_inter),
            ("tolerance", self.tolerance),
        ];
        for (name, v) in weights {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidOption(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.alpha_intra > self.alpha_inter {
            return Err(Error::InvalidOption(format!(
                "alpha_intra ({}) must not exceed alpha_inter ({})",
                self.alpha_intra, self.alpha_inter
            )));
        }
        if self.base_loads.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidOption("base loads must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Communication volumes implied by a plan, with optimal same-GPU and
/// same-node locality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommPlanStats {
    pub send: Vec<f64>,
    pub recv: Vec<f64>,
    pub local: Vec<f64>,
    /// Per-node inter-node send and receive volume.
    pub node_send: Vec<f64>,
    pub node_recv: Vec<f64>,
    /// Maximum GPU load including base loads.
    pub comp: f64,
    /// `max_g max(send_g, recv_g)`.
    pub comm: f64,
    /// `max_k max(node_send_k, node_recv_k) / gpus_per_node`.
    pub comm_inter: f64,
}

impl CommPlanStats {
    /// The objective this plan attains under `options`.
    pub fn objective(&self, options: &SolveOptions) -> f64 {
        match options.mode {
            SolveMode::BalanceOnly => self.comp,
            SolveMode::CommAware => self.comp + options.alpha * self.comm,
            SolveMode::TopologyAware => {
                self.comp + options.alpha_intra * self.comm + options.alpha_inter * self.comm_inter
            }
        }
    }
}

/// Recomputes [`CommPlanStats`] from a plan and its inputs.
pub fn comm_plan_stats(
    placement: &Placement,
    loads: &LoadMatrix,
    plan: &ReplicaLoadPlan,
    topology: &Topology,
    base_loads: &[f64],
) -> Result<CommPlanStats> {
    let g_count = placement.num_gpus();
    loads.check_dims(placement.num_experts(), g_count)?;
    if topology.num_gpus != g_count {
        return Err(Error::Dimension(format!(
            "topology has {} GPUs, placement has {g_count}",
            topology.num_gpus
        )));
    }
    let nodes = topology.num_nodes();
    let mut local = vec![0.0; g_count];
    let mut hosted_x = vec![0.0; g_count];
    let mut node_send = vec![0.0; nodes];
    let mut node_recv = vec![0.0; nodes];
    for e in 0..placement.num_experts() {
        let mut node_x = vec![0.0; nodes];
        for &(g, x) in plan.expert(e) {
            local[g] += x.min(loads.get(e, g) as f64);
            hosted_x[g] += x;
            node_x[topology.node_of(g)] += x;
        }
        let mut node_in = vec![0.0; nodes];
        for (g, &c) in loads.row(e).iter().enumerate() {
            node_in[topology.node_of(g)] += c as f64;
        }
        for k in 0..nodes {
            let kept = node_x[k].min(node_in[k]);
            node_send[k] += node_in[k] - kept;
            node_recv[k] += node_x[k] - kept;
        }
    }
    let sources = loads.source_totals();
    let send: Vec<f64> = (0..g_count).map(|g| sources[g] as f64 - local[g]).collect();
    let recv: Vec<f64> = (0..g_count).map(|g| hosted_x[g] - local[g]).collect();
    let comp = (0..g_count)
        .map(|g| hosted_x[g] + base_loads.get(g).copied().unwrap_or(0.0))
        .fold(0.0, f64::max);
    let comm = send.iter().zip(&recv).map(|(s, r)| s.max(*r)).fold(0.0, f64::max);
    let comm_inter = node_send
        .iter()
        .zip(&node_recv)
        .map(|(s, r)| s.max(*r))
        .fold(0.0, f64::max)
        / topology.gpus_per_node as f64;
    Ok(CommPlanStats {
        send,
        recv,
        local,
        node_send,
        node_recv,
        comp,
        comm,
        comm_inter,
    })
}

#[derive(Clone, Debug)]
struct Layout {
    mode: SolveMode,
    num_gpus: usize,
    num_experts: usize,
    topology: Topology,
    obj: usize,
    x: Vec<Vec<usize>>,
    l: Vec<Vec<usize>>,
    expert_rows: Vec<Option<usize>>,
    gpu_rows: Vec<usize>,
    send_rows: Vec<usize>,
    node_send_rows: Vec<usize>,
    /// Per expert: `(node, row)` capping node-local tokens.
    cap_rows: Vec<Vec<(usize, usize)>>,
    /// `x` variables in (expert id, GPU id) order.
    lex: Vec<usize>,
}

enum Update {
    Rhs(usize, f64),
    Bounds(usize, f64, f64),
}

fn build_layout(placement: &Placement, topology: &Topology, options: &SolveOptions) -> Result<(LpBuilder, Layout)> {
    let g_count = placement.num_gpus();
    let e_count = placement.num_experts();
    let mode = options.mode;
    let nodes = topology.num_nodes();
    let mut lp = LpBuilder::default();

    for (e, group) in placement.edp_groups().iter().enumerate() {
        if let Some(&g) = group.iter().find(|&&g| g >= g_count) {
            return Err(Error::Placement(format!(
                "expert {e} lists GPU {g}, but there are only {g_count} GPUs"
            )));
        }
    }

    let obj = lp.add_var(0.0, INF, 1.0);
    let t = lp.add_var(0.0, INF, 0.0);
    let comm_vars: Vec<(usize, f64)> = match mode {
        SolveMode::BalanceOnly => Vec::new(),
        SolveMode::CommAware => vec![(lp.add_var(0.0, INF, 0.0), options.alpha)],
        SolveMode::TopologyAware => vec![
            (lp.add_var(0.0, INF, 0.0), options.alpha_intra),
            (lp.add_var(0.0, INF, 0.0), options.alpha_inter),
        ],
    };

    let mut x = Vec::with_capacity(e_count);
    let mut l = vec![Vec::new(); e_count];
    let mut h = vec![Vec::new(); e_count];
    for (e, group) in placement.edp_groups().iter().enumerate() {
        let vars: Vec<usize> = group
            .iter()
            .map(|&g| {
                let pinned = options.pinned_zero.contains(&(e, g));
                lp.add_var(0.0, if pinned { 0.0 } else { INF }, 0.0)
            })
            .collect();
        x.push(vars);
        if mode != SolveMode::BalanceOnly {
            l[e] = group.iter().map(|_| lp.add_var(0.0, 0.0, 0.0)).collect();
        }
        if mode == SolveMode::TopologyAware {
            h[e] = group.iter().map(|_| lp.add_var(0.0, INF, 0.0)).collect();
        }
    }

    // Objective definition: obj - t - Σ w·c = 0.
    let mut coeffs = vec![(obj, 1.0), (t, -1.0)];
    coeffs.extend(comm_vars.iter().map(|&(c, w)| (c, -w)));
    lp.add_row(coeffs, RowKind::Eq, 0.0);

    let expert_rows = x
        .iter()
        .map(|vars| (!vars.is_empty()).then(|| lp.add_row(vars.iter().map(|&v| (v, 1.0)).collect(), RowKind::Eq, 0.0)))
        .collect();

    let by_gpu = placement.experts_by_gpu();
    let position = |e: usize, g: usize| placement.group(e).iter().position(|&q| q == g).expect("hosted");

    let gpu_rows = (0..g_count)
        .map(|g| {
            let mut coeffs: Vec<(usize, f64)> = by_gpu[g].iter().map(|&e| (x[e][position(e, g)], 1.0)).collect();
            coeffs.push((t, -1.0));
            lp.add_row(coeffs, RowKind::Le, 0.0)
        })
        .collect();

    let mut send_rows = Vec::new();
    let mut node_send_rows = Vec::new();
    let mut cap_rows = vec![Vec::new(); e_count];
    if let Some(&(c1, _)) = comm_vars.first() {
        for e in 0..e_count {
            for (&xv, &lv) in x[e].iter().zip(&l[e]) {
                lp.add_row(vec![(lv, 1.0), (xv, -1.0)], RowKind::Le, 0.0);
            }
        }
        for g in 0..g_count {
            let mut send: Vec<(usize, f64)> = by_gpu[g].iter().map(|&e| (l[e][position(e, g)], -1.0)).collect();
            send.push((c1, -1.0));
            send_rows.push(lp.add_row(send, RowKind::Le, 0.0));
            let mut recv: Vec<(usize, f64)> = Vec::new();
            for &e in &by_gpu[g] {
                let p = position(e, g);
                recv.push((x[e][p], 1.0));
                recv.push((l[e][p], -1.0));
            }
            recv.push((c1, -1.0));
            lp.add_row(recv, RowKind::Le, 0.0);
        }
    }
    if let Some(&(c2, _)) = comm_vars.get(1) {
        let gpn = topology.gpus_per_node as f64;
        for e in 0..e_count {
            for (&xv, &hv) in x[e].iter().zip(&h[e]) {
                lp.add_row(vec![(hv, 1.0), (xv, -1.0)], RowKind::Le, 0.0);
            }
            let mut per_node: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
            for (p, &g) in placement.group(e).iter().enumerate() {
                per_node[topology.node_of(g)].push((h[e][p], 1.0));
            }
            for (k, coeffs) in per_node.into_iter().enumerate() {
                if !coeffs.is_empty() {
                    cap_rows[e].push((k, lp.add_row(coeffs, RowKind::Le, 0.0)));
                }
            }
        }
        for k in 0..nodes {
            let mut send = Vec::new();
            let mut recv = Vec::new();
            let node_gpus = by_gpu.iter().enumerate().skip(k * topology.gpus_per_node);
            for (g, hosted) in node_gpus.take(topology.gpus_per_node) {
                for &e in hosted {
                    let p = position(e, g);
                    send.push((h[e][p], -1.0));
                    recv.push((x[e][p], 1.0));
                    recv.push((h[e][p], -1.0));
                }
            }
            send.push((c2, -gpn));
            recv.push((c2, -gpn));
            node_send_rows.push(lp.add_row(send, RowKind::Le, 0.0));
            lp.add_row(recv, RowKind::Le, 0.0);
        }
    }

    let mut lex = Vec::new();
    for (e, group) in placement.edp_groups().iter().enumerate() {
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by_key(|&p| group[p]);
        lex.extend(order.into_iter().map(|p| x[e][p]));
    }

    let layout = Layout {
        mode,
        num_gpus: g_count,
        num_experts: e_count,
        topology: *topology,
        obj,
        x,
        l,
        expert_rows,
        gpu_rows,
        send_rows,
        node_send_rows,
        cap_rows,
        lex,
    };
    Ok((lp, layout))
}

fn load_updates(layout: &Layout, placement: &Placement, loads: &LoadMatrix, base: &[f64]) -> Result<Vec<Update>> {
    loads.check_dims(layout.num_experts, layout.num_gpus)?;
    if !base.is_empty() && base.len() != layout.num_gpus {
        return Err(Error::Dimension(format!(
            "{} base loads for {} GPUs",
            base.len(),
            layout.num_gpus
        )));
    }
    let totals = loads.expert_totals();
    let mut updates = Vec::new();
    for (e, row) in layout.expert_rows.iter().enumerate() {
        match row {
            Some(r) => updates.push(Update::Rhs(*r, totals[e] as f64)),
            None if totals[e] > 0 => {
                return Err(Error::Placement(format!(
                    "expert {e} has load {} but an empty EDP group",
                    totals[e]
                )))
            }
            None => {}
        }
    }
    for (g, &r) in layout.gpu_rows.iter().enumerate() {
        updates.push(Update::Rhs(r, -base.get(g).copied().unwrap_or(0.0)));
    }
    if layout.mode != SolveMode::BalanceOnly {
        for e in 0..layout.num_experts {
            for (p, &g) in placement.group(e).iter().enumerate() {
                updates.push(Update::Bounds(layout.l[e][p], 0.0, loads.get(e, g) as f64));
            }
        }
        let sources = loads.source_totals();
        for (g, &r) in layout.send_rows.iter().enumerate() {
            updates.push(Update::Rhs(r, -(sources[g] as f64)));
        }
    }
    if layout.mode == SolveMode::TopologyAware {
        let topo = &layout.topology;
        let sources = loads.source_totals();
        for (k, &r) in layout.node_send_rows.iter().enumerate() {
            let s: u64 = sources[k * topo.gpus_per_node..(k + 1) * topo.gpus_per_node]
                .iter()
                .sum();
            updates.push(Update::Rhs(r, -(s as f64)));
        }
        for e in 0..layout.num_experts {
            for &(k, r) in &layout.cap_rows[e] {
                let s: u64 = loads.row(e)[k * topo.gpus_per_node..(k + 1) * topo.gpus_per_node]
                    .iter()
                    .sum();
                updates.push(Update::Rhs(r, s as f64));
            }
        }
    }
    Ok(updates)
}

/// Opaque, reusable solver state for warm starts on one placement and mode.
#[derive(Clone, Debug)]
pub struct SolverState {
    placement: Placement,
    options: SolveOptions,
    layout: Layout,
    tableau: Tableau,
    iterations: u64,
    lex_iterations: u64,
    objective: f64,
}

impl SolverState {
    /// Simplex iterations of the last primary solve.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Simplex iterations of the last tie-break pass.
    pub fn lex_iterations(&self) -> u64 {
        self.lex_iterations
    }

    /// Optimal objective of the last solve.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn options(&self) -> &SolveOptions {
        &self.options
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    /// Replaces the constant per-GPU base loads used by the next warm solve.
    pub fn set_base_loads(&mut self, base: Vec<f64>) -> Result<()> {
        let mut options = self.options.clone();
        options.base_loads = base;
        options.validate()?;
        self.options = options;
        Ok(())
    }
}

fn apply_to_tableau(tableau: &mut Tableau, updates: &[Update]) {
    for u in updates {
        match *u {
            Update::Rhs(r, v) => tableau.set_rhs(r, v),
            Update::Bounds(j, lo, hi) => tableau.set_bounds(j, lo, hi),
        }
    }
}

fn extract_plan(layout: &Layout, placement: &Placement, tableau: &Tableau) -> ReplicaLoadPlan {
    let entries = placement
        .edp_groups()
        .iter()
        .enumerate()
        .map(|(e, group)| {
            group
                .iter()
                .zip(&layout.x[e])
                .map(|(&g, &v)| (g, snap(tableau.value(v))))
                .collect()
        })
        .collect();
    ReplicaLoadPlan::from_entries(layout.num_gpus, entries)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(0.0)
    } else {
        v.max(0.0)
    }
}

/// Runs the tie-break pass on a copy of the optimal tableau and returns the plan.
fn finish(state: &mut SolverState) -> Result<ReplicaLoadPlan> {
    state.objective = state.tableau.objective_value();
    if !state.options.lexicographic {
        state.lex_iterations = 0;
        return Ok(extract_plan(&state.layout, &state.placement, &state.tableau));
    }
    let mut lex = state.tableau.clone();
    lex.reset_iterations();
    lex.cap_at_current(state.layout.obj);
    for &v in &state.layout.lex {
        lex.set_objective(&[(v, 1.0)]);
        lex.optimize()?;
        lex.fix_at_current(v);
    }
    state.lex_iterations = lex.iterations();
    Ok(extract_plan(&state.layout, &state.placement, &lex))
}

fn cold(
    placement: &Placement,
    loads: &LoadMatrix,
    topology: &Topology,
    options: &SolveOptions,
) -> Result<(ReplicaLoadPlan, SolverState)> {
    options.validate()?;
    if topology.num_gpus != placement.num_gpus() {
        return Err(Error::Dimension(format!(
            "topology has {} GPUs, placement has {}",
            topology.num_gpus,
            placement.num_gpus()
        )));
    }
    let (mut lp, layout) = build_layout(placement, topology, options)?;
    for u in load_updates(&layout, placement, loads, &options.base_loads)? {
        match u {
            Update::Rhs(r, v) => lp.set_rhs(r, v),
            Update::Bounds(j, lo, hi) => lp.set_bounds(j, lo, hi),
        }
    }
    let mut tableau = Tableau::new(lp);
    tableau.solve()?;
    let mut state = SolverState {
        placement: placement.clone(),
        options: options.clone(),
        layout,
        iterations: tableau.iterations(),
        tableau,
        lex_iterations: 0,
        objective: 0.0,
    };
    let plan = finish(&mut state)?;
    Ok((plan, state))
}

/// Minimizes the maximum GPU load (balance-only mode).
pub fn solve_replica_loads(
    placement: &Placement,
    loads: &LoadMatrix,
    options: &SolveOptions,
) -> Result<(ReplicaLoadPlan, SolverState)> {
    if options.mode != SolveMode::BalanceOnly {
        return Err(Error::InvalidOption(
            "solve_replica_loads requires balance-only mode; use solve_comm_aware".into(),
        ));
    }
    cold(placement, loads, &Topology::single_node(placement.num_gpus()), options)
}

/// Minimizes computation plus weighted communication.
pub fn solve_comm_aware(
    placement: &Placement,
    loads: &LoadMatrix,
    topology: &Topology,
    options: &SolveOptions,
) -> Result<(ReplicaLoadPlan, CommPlanStats, SolverState)> {
    if options.mode == SolveMode::BalanceOnly {
        return Err(Error::InvalidOption(
            "solve_comm_aware requires comm-aware or topology-aware mode".into(),
        ));
    }
    let (plan, state) = cold(placement, loads, topology, options)?;
    let stats = comm_plan_stats(placement, loads, &plan, topology, &options.base_loads)?;
    Ok((plan, stats, state))
}

/// Re-solves with new loads starting from the basis in `state`.
pub fn warm_solve(state: &mut SolverState, placement: &Placement, loads: &LoadMatrix) -> Result<ReplicaLoadPlan> {
    if placement != &state.placement {
        return Err(Error::StaleState(
            "placement differs from the one the state was built on".into(),
        ));
    }
    if loads.num_experts() != state.layout.num_experts || loads.num_gpus() != state.layout.num_gpus {
        return Err(Error::StaleState(format!(
            "loads are {}x{}, state was built for {}x{}",
            loads.num_experts(),
            loads.num_gpus(),
            state.layout.num_experts,
            state.layout.num_gpus
        )));
    }
    let updates = load_updates(&state.layout, placement, loads, &state.options.base_loads)?;
    state.tableau.reset_iterations();
    apply_to_tableau(&mut state.tableau, &updates);
    state.tableau.resolve()?;
    state.iterations = state.tableau.iterations();
    finish(state)
}

/// Stateful wrapper: cold on the first call, warm afterwards.
#[derive(Clone, Debug)]
pub struct Scheduler {
    placement: Placement,
    topology: Topology,
    options: SolveOptions,
    state: Option<SolverState>,
    stats: SchedulerStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerStats {
    pub cold_solves: u64,
    pub warm_solves: u64,
    pub iterations: u64,
    pub lex_iterations: u64,
}

impl Scheduler {
    pub fn new(placement: Placement, topology: Topology, options: SolveOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            placement,
            topology,
            options,
            state: None,
            stats: SchedulerStats::default(),
        })
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn options(&self) -> &SolveOptions {
        &self.options
    }

    pub fn stats(&self) -> SchedulerStats {
        self.stats
    }

    /// Switches to a new placement; the next solve is cold.
    pub fn set_placement(&mut self, placement: Placement) {
        self.placement = placement;
        self.state = None;
    }

    pub fn solve(&mut self, loads: &LoadMatrix) -> Result<ReplicaLoadPlan> {
        self.solve_with_base(loads, Vec::new())
    }

    pub fn solve_with_base(&mut self, loads: &LoadMatrix, base: Vec<f64>) -> Result<ReplicaLoadPlan> {
        let plan = match self.state.as_mut() {
            Some(state) => {
                state.set_base_loads(base)?;
                let plan = warm_solve(state, &self.placement, loads)?;
                self.stats.warm_solves += 1;
                plan
            }
            None => {
                let mut options = self.options.clone();
                options.base_loads = base;
                let (plan, state) = cold(&self.placement, loads, &self.topology, &options)?;
                self.state = Some(state);
                self.stats.cold_solves += 1;
                plan
            }
        };
        let state = self.state.as_ref().expect("state set above");
        self.stats.iterations += state.iterations();
        self.stats.lex_iterations += state.lex_iterations();
        Ok(plan)
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.state.as_ref().map(SolverState::objective)
    }
}

/// Rounds a fractional plan to integer token counts per expert by largest
/// remainder, breaking ties toward the lowest GPU id.
pub fn integerize_plan(plan: &ReplicaLoadPlan) -> Result<ReplicaLoadPlan> {
    let mut entries = Vec::with_capacity(plan.num_experts());
    for (e, expert) in plan.entries().iter().enumerate() {
        let total: f64 = expert.iter().map(|&(_, x)| x).sum();
        let target = total.round();
        if (total - target).abs() > 1e-6 * target.max(1.0) {
            return Err(Error::Contract(format!(
                "expert {e} has non-integer total load {total}"
            )));
        }
        let snapped: Vec<f64> = expert
            .iter()
            .map(|&(_, x)| {
                let r = x.round();
                if (x - r).abs() <= 1e-7 {
                    r
                } else {
                    x
                }
            })
            .collect();
        let mut floors: Vec<f64> = snapped.iter().map(|x| x.floor().max(0.0)).collect();
        let assigned: f64 = floors.iter().sum();
        let mut deficit = (target - assigned).round() as i64;
        let mut order: Vec<usize> = (0..expert.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = snapped[a] - floors[a];
            let rb = snapped[b] - floors[b];
            rb.total_cmp(&ra).then(expert[a].0.cmp(&expert[b].0))
        });
        let mut i = 0;
        while deficit > 0 && !order.is_empty() {
            floors[order[i % order.len()]] += 1.0;
            deficit -= 1;
            i += 1;
        }
        while deficit < 0 {
            // Only reachable through snapping noise; take from the largest entries.
            let p = (0..floors.len())
                .max_by(|&a, &b| floors[a].total_cmp(&floors[b]).then(b.cmp(&a)))
                .expect("non-empty");
            floors[p] -= 1.0;
            deficit += 1;
        }
        entries.push(expert.iter().zip(floors).map(|(&(g, _), v)| (g, v)).collect());
    }
    Ok(ReplicaLoadPlan::from_entries(plan.num_gpus(), entries))
}

/// Rounds a fractional plan so that every entry moves by less than one token,
/// per-expert totals are preserved, and every GPU ends at most at the ceiling
/// of its fractional load.
///
/// The fractional parts form a feasible flow from experts to GPUs; an
/// integral max flow rounding each entry up or down therefore exists and is
/// found by augmenting paths. Falls back to [`integerize_plan`] if numerical
/// noise prevents saturation.
pub fn integerize_plan_balanced(plan: &ReplicaLoadPlan) -> Result<ReplicaLoadPlan> {
    let fallback = integerize_plan(plan)?;
    let g_count = plan.num_gpus();
    let snapped: Vec<Vec<f64>> = plan
        .entries()
        .iter()
        .map(|expert| {
            expert
                .iter()
                .map(|&(_, x)| {
                    let r = x.round();
                    if (x - r).abs() <= 1e-7 {
                        r
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect();
    let mut gpu_frac = vec![0.0; g_count];
    let mut gpu_floor = vec![0i64; g_count];
    let mut floors: Vec<Vec<f64>> = Vec::with_capacity(snapped.len());
    let mut need = Vec::with_capacity(snapped.len());
    for (e, xs) in snapped.iter().enumerate() {
        let f: Vec<f64> = xs.iter().map(|x| x.floor().max(0.0)).collect();
        for (&(g, _), (&x, &fl)) in plan.expert(e).iter().zip(xs.iter().zip(&f)) {
            gpu_frac[g] += x;
            gpu_floor[g] += fl as i64;
        }
        let total: f64 = fallback.expert_total(e);
        need.push((total - f.iter().sum::<f64>()).round() as i64);
        floors.push(f);
    }

    // Nodes: 0 source, 1..=E experts, then GPUs, then sink.
    let e_count = snapped.len();
    let sink = 1 + e_count + g_count;
    let mut graph = FlowGraph::new(sink + 1);
    let mut entry_edges = Vec::new();
    for e in 0..e_count {
        graph.add_edge(0, 1 + e, need[e]);
        for (p, &(g, _)) in plan.expert(e).iter().enumerate() {
            if snapped[e][p] - floors[e][p] > 1e-9 {
                entry_edges.push((e, p, graph.add_edge(1 + e, 1 + e_count + g, 1)));
            }
        }
    }
    for g in 0..g_count {
        let cap = (gpu_frac[g] - 1e-7).ceil() as i64 - gpu_floor[g];
        graph.add_edge(1 + e_count + g, sink, cap.max(0));
    }
    let required: i64 = need.iter().sum();
    if graph.max_flow(0, sink) != required {
        return Ok(fallback);
    }
    for (e, p, edge) in entry_edges {
        if graph.flow(edge) > 0 {
            floors[e][p] += 1.0;
        }
    }
    let entries = plan
        .entries()
        .iter()
        .zip(floors)
        .map(|(expert, f)| expert.iter().zip(f).map(|(&(g, _), v)| (g, v)).collect())
        .collect();
    Ok(ReplicaLoadPlan::from_entries(g_count, entries))
}

/// Residual graph for a small integral max-flow (BFS augmenting paths).
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i64>,
    original: Vec<i64>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            original: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: i64) -> usize {
        let id = self.to.len();
        self.adj[u].push(id);
        self.to.push(v);
        self.cap.push(cap);
        self.original.push(cap);
        self.adj[v].push(id + 1);
        self.to.push(u);
        self.cap.push(0);
        self.original.push(0);
        id
    }

    fn flow(&self, edge: usize) -> i64 {
        self.original[edge] - self.cap[edge]
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.adj.len();
        let mut total = 0;
        loop {
            let mut prev = vec![usize::MAX; n];
            let mut queue = std::collections::VecDeque::from([s]);
            let mut seen = vec![false; n];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                for &id in &self.adj[u] {
                    let v = self.to[id];
                    if !seen[v] && self.cap[id] > 0 {
                        seen[v] = true;
                        prev[v] = id;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                let id = prev[v];
                push = push.min(self.cap[id]);
                v = self.to[id ^ 1];
            }
            let mut v = t;
            while v != s {
                let id = prev[v];
                self.cap[id] -= push;
                self.cap[id ^ 1] += push;
                v = self.to[id ^ 1];
            }
            total += push;
        }
    }
}
