//! Dense-tableau simplex over bounded variables.
//!
//! Solves `min c·x` subject to rows `a·x <= b` or `a·x = b` and
//! `lower <= x <= upper` (lower bounds finite). Every row owns a unit column
//! (its slack, or an artificial), which keeps `B^-1` readable from the
//! tableau at all times. Cold solves run two primal phases; warm solves
//! refactorize the stored basis, apply new right-hand sides and bounds, and
//! run the dual simplex followed by a primal cleanup.
//!
//! Pricing is Dantzig's rule with lowest-index ties, falling back to Bland's
//! rule after a run of degenerate pivots. Everything is sequential and
//! deterministic: identical inputs produce bit-identical iterates.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

pub(crate) const INF: f64 = f64::INFINITY;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const BLAND_AFTER: usize = 30;
const MAX_ITERATIONS: u64 = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowKind {
    Le,
    Eq,
}

#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    kind: RowKind,
    rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LpBuilder {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    rows: Vec<Row>,
}

impl LpBuilder {
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        debug_assert!(lower.is_finite() && lower <= upper);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.push(cost);
        self.lower.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn set_rhs(&mut self, row: usize, value: f64) {
        self.rows[row].rhs = value;
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Clone, Debug)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    num_structural: usize,
    /// Original constraint matrix after row sign normalization, row-major.
    a0: Vec<f64>,
    /// `B^-1 a0`, row-major.
    t: Vec<f64>,
    b: Vec<f64>,
    row_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    unit_col: Vec<usize>,
    artificials: Vec<usize>,
    iterations: u64,
}

impl Tableau {
    pub fn new(builder: LpBuilder) -> Self {
        let LpBuilder {
            mut lower,
            mut upper,
            mut cost,
            rows,
        } = builder;
        let num_structural = lower.len();
        let m = rows.len();

        // Residual of each row with structural variables at their lower bounds.
        let residual: Vec<f64> = rows
            .iter()
            .map(|r| r.rhs - r.coeffs.iter().map(|&(j, a)| a * lower[j]).sum::<f64>())
            .collect();

        let mut row_sign = vec![1.0; m];
        let mut extra: Vec<(usize, f64)> = Vec::new(); // (row, coefficient) per added column
        let mut unit_col = vec![usize::MAX; m];
        let mut artificials = Vec::new();
        let mut n = num_structural;

        for (i, row) in rows.iter().enumerate() {
            if row.kind == RowKind::Le {
                if residual[i] >= 0.0 {
                    extra.push((i, 1.0));
                    unit_col[i] = n;
                } else {
                    row_sign[i] = -1.0;
                    extra.push((i, -1.0));
                }
                lower.push(0.0);
                upper.push(INF);
                cost.push(0.0);
                n += 1;
            } else if residual[i] < 0.0 {
                row_sign[i] = -1.0;
            }
        }
        for i in 0..m {
            if unit_col[i] == usize::MAX {
                extra.push((i, 1.0));
                unit_col[i] = n;
                artificials.push(n);
                lower.push(0.0);
                upper.push(INF);
                cost.push(0.0);
                n += 1;
            }
        }

        let mut a0 = vec![0.0; m * n];
        let mut b = vec![0.0; m];
        for (i, row) in rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                a0[i * n + j] += row_sign[i] * a;
            }
            b[i] = row_sign[i] * row.rhs;
        }
        for (k, &(i, a)) in extra.iter().enumerate() {
            a0[i * n + num_structural + k] = a;
        }

        let mut x = lower.clone();
        let mut status = vec![Status::AtLower; n];
        let basis = unit_col.clone();
        for (i, &j) in basis.iter().enumerate() {
            status[j] = Status::Basic;
            x[j] = row_sign[i] * residual[i];
        }

        Self {
            m,
            n,
            num_structural,
            t: a0.clone(),
            a0,
            b,
            row_sign,
            lower,
            upper,
            cost,
            x,
            basis,
            status,
            unit_col,
            artificials,
            iterations: 0,
        }
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn reset_iterations(&mut self) {
        self.iterations = 0;
    }

    pub fn value(&self, var: usize) -> f64 {
        self.x[var]
    }

    pub fn objective_value(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    /// Two-phase primal simplex from the initial unit basis.
    pub fn solve(&mut self) -> Result<()> {
        let real_cost = std::mem::replace(&mut self.cost, vec![0.0; self.n]);
        for &a in &self.artificials {
            self.cost[a] = 1.0;
        }
        self.primal()?;
        let scale = 1.0 + self.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let infeasibility: f64 = self.artificials.iter().map(|&a| self.x[a]).sum();
        if infeasibility > 1e-7 * scale {
            return Err(Error::Solver(format!(
                "problem infeasible (phase-one residual {infeasibility:.3e})"
            )));
        }
        for &a in &self.artificials.clone() {
            self.upper[a] = 0.0;
            if self.status[a] != Status::Basic {
                self.x[a] = 0.0;
                self.status[a] = Status::AtLower;
            }
        }
        self.cost = real_cost;
        self.recompute_basic();
        self.primal()
    }

    /// Re-optimizes after right-hand-side or bound changes, starting from the
    /// current basis.
    pub fn resolve(&mut self) -> Result<()> {
        self.refactor()?;
        self.recompute_basic();
        self.dual()?;
        self.primal()
    }

    /// Primal simplex from the current (feasible) point, e.g. after an
    /// objective change.
    pub fn optimize(&mut self) -> Result<()> {
        self.primal()
    }

    pub fn set_rhs(&mut self, row: usize, value: f64) {
        self.b[row] = self.row_sign[row] * value;
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        debug_assert!(var < self.num_structural);
        self.lower[var] = lower;
        self.upper[var] = upper;
        match self.status[var] {
            Status::Basic => {}
            Status::AtUpper if upper.is_finite() => self.x[var] = upper,
            _ => {
                self.status[var] = Status::AtLower;
                self.x[var] = lower;
            }
        }
    }

    /// Caps a variable from above at its current value (basic or not).
    pub fn cap_at_current(&mut self, var: usize) {
        let v = self.x[var].max(self.lower[var]);
        self.upper[var] = v;
        if self.status[var] == Status::AtUpper {
            self.x[var] = v;
        }
    }

    /// Pins a variable to its current value.
    pub fn fix_at_current(&mut self, var: usize) {
        let v = self.x[var].max(self.lower[var]).min(self.upper[var]);
        self.lower[var] = v;
        self.upper[var] = v;
        if self.status[var] != Status::Basic {
            self.x[var] = v;
            self.status[var] = Status::AtLower;
        }
    }

    pub fn set_objective(&mut self, coeffs: &[(usize, f64)]) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for &(j, c) in coeffs {
            self.cost[j] = c;
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.upper[j] - self.lower[j] <= 0.0
    }

    fn reduced_costs(&self) -> Vec<f64> {
        let mut d = self.cost.clone();
        for (i, &bj) in self.basis.iter().enumerate() {
            let y = self.cost[bj];
            if y != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= y * tij;
                }
            }
        }
        for &bj in &self.basis {
            d[bj] = 0.0;
        }
        d
    }

    /// `x_B = B^-1 (b - N x_N)`.
    fn recompute_basic(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut r = self.b.clone();
        for j in 0..n {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (i, ri) in r.iter_mut().enumerate() {
                    let a = self.a0[i * n + j];
                    if a != 0.0 {
                        *ri -= a * xj;
                    }
                }
            }
        }
        for i in 0..m {
            let mut v = 0.0;
            for (k, &rk) in r.iter().enumerate() {
                if rk != 0.0 {
                    v += self.t[i * n + self.unit_col[k]] * rk;
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    /// Rebuilds `B^-1 a0` from the basis columns of the original matrix.
    fn refactor(&mut self) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let mut aug = vec![0.0; m * 2 * m];
        for i in 0..m {
            for (k, &bk) in self.basis.iter().enumerate() {
                aug[i * 2 * m + k] = self.a0[i * n + bk];
            }
            aug[i * 2 * m + m + i] = 1.0;
        }
        let w = 2 * m;
        for col in 0..m {
            let pivot_row = (col..m)
                .max_by(|&p, &q| {
                    aug[p * w + col]
                        .abs()
                        .total_cmp(&aug[q * w + col].abs())
                        .then(q.cmp(&p))
                })
                .expect("non-empty range");
            let pv = aug[pivot_row * w + col];
            if pv.abs() < 1e-12 {
                return Err(Error::Solver("singular basis during refactorization".into()));
            }
            if pivot_row != col {
                for k in 0..w {
                    aug.swap(pivot_row * w + k, col * w + k);
                }
            }
            for k in 0..w {
                aug[col * w + k] /= pv;
            }
            for i in 0..m {
                if i != col {
                    let f = aug[i * w + col];
                    if f != 0.0 {
                        for k in 0..w {
                            aug[i * w + k] -= f * aug[col * w + k];
                        }
                    }
                }
            }
        }
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..m {
                let binv = aug[i * w + m + k];
                if binv != 0.0 {
                    for j in 0..n {
                        t[i * n + j] += binv * self.a0[k * n + j];
                    }
                }
            }
        }
        self.t = t;
        for (i, &bj) in self.basis.iter().enumerate() {
            for k in 0..m {
                self.t[k * n + bj] = if k == i { 1.0 } else { 0.0 };
            }
        }
        Ok(())
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let pv = self.t[r * n + q];
        for j in 0..n {
            self.t[r * n + j] /= pv;
        }
        self.t[r * n + q] = 1.0;
        let pivot_row: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f != 0.0 {
                let row = &mut self.t[i * n..(i + 1) * n];
                for (tij, &pj) in row.iter_mut().zip(&pivot_row) {
                    *tij -= f * pj;
                }
                row[q] = 0.0;
            }
        }
        self.basis[r] = q;
    }

    fn bump(&mut self) -> Result<()> {
        self.iterations += 1;
        if self.iterations > MAX_ITERATIONS {
            return Err(Error::Solver("iteration limit reached".into()));
        }
        Ok(())
    }

    fn primal(&mut self) -> Result<()> {
        let n = self.n;
        let mut degenerate_run = 0usize;
        loop {
            let d = self.reduced_costs();
            let bland = degenerate_run > BLAND_AFTER;

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..n {
                if self.status[j] == Status::Basic || self.is_fixed(j) {
                    continue;
                }
                let (score, dir) = match self.status[j] {
                    Status::AtLower if d[j] < -OPT_TOL => (-d[j], 1.0),
                    Status::AtUpper if d[j] > OPT_TOL => (d[j], -1.0),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if score > best {
                    best = score;
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(());
            };

            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i * n + q] * dir;
                let bi = self.basis[i];
                let (limit, to_lower) = if a > PIVOT_TOL {
                    ((self.x[bi] - self.lower[bi]) / a, true)
                } else if a < -PIVOT_TOL {
                    if self.upper[bi] == INF {
                        continue;
                    }
                    ((self.upper[bi] - self.x[bi]) / -a, false)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = if limit < theta - TIE_TOL {
                    true
                } else if limit <= theta + TIE_TOL {
                    match leave {
                        None => false,
                        Some((r, _, _)) if bland => bi < self.basis[r],
                        Some((r, _, ar)) => {
                            a.abs() > ar.abs() + TIE_TOL
                                || ((a.abs() - ar.abs()).abs() <= TIE_TOL && bi < self.basis[r])
                        }
                    }
                } else {
                    false
                };
                if better {
                    theta = theta.min(limit);
                    leave = Some((i, to_lower, a));
                }
            }
            if theta == INF {
                return Err(Error::Solver("problem unbounded".into()));
            }
            degenerate_run = if theta <= TIE_TOL { degenerate_run + 1 } else { 0 };
            self.bump()?;

            match leave {
                None => {
                    if dir > 0.0 {
                        self.x[q] = self.upper[q];
                        self.status[q] = Status::AtUpper;
                    } else {
                        self.x[q] = self.lower[q];
                        self.status[q] = Status::AtLower;
                    }
                }
                Some((r, to_lower, _)) => {
                    let leaving = self.basis[r];
                    self.pivot(r, q);
                    self.status[q] = Status::Basic;
                    if to_lower {
                        self.status[leaving] = Status::AtLower;
                        self.x[leaving] = self.lower[leaving];
                    } else {
                        self.status[leaving] = Status::AtUpper;
                        self.x[leaving] = self.upper[leaving];
                    }
                }
            }
            self.recompute_basic();
        }
    }

    fn dual(&mut self) -> Result<()> {
        let n = self.n;
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run > BLAND_AFTER;
            let mut leave: Option<(usize, bool)> = None;
            let mut worst = FEAS_TOL;
            for i in 0..self.m {
                let bi = self.basis[i];
                let (viol, to_lower) = if self.x[bi] < self.lower[bi] - FEAS_TOL {
                    (self.lower[bi] - self.x[bi], true)
                } else if self.x[bi] > self.upper[bi] + FEAS_TOL {
                    (self.x[bi] - self.upper[bi], false)
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, _)) if bland => bi < self.basis[r],
                    Some(_) => viol > worst,
                };
                if better {
                    worst = viol;
                    leave = Some((i, to_lower));
                }
            }
            let Some((r, to_lower)) = leave else {
                return Ok(());
            };

            let d = self.reduced_costs();
            let mut entering: Option<(usize, f64, f64)> = None; // (col, ratio, |alpha|)
            for j in 0..n {
                if self.status[j] == Status::Basic || self.is_fixed(j) {
                    continue;
                }
                let alpha = self.t[r * n + j];
                let eligible = match (self.status[j], to_lower) {
                    (Status::AtLower, true) => alpha < -PIVOT_TOL,
                    (Status::AtUpper, true) => alpha > PIVOT_TOL,
                    (Status::AtLower, false) => alpha > PIVOT_TOL,
                    (Status::AtUpper, false) => alpha < -PIVOT_TOL,
                    (Status::Basic, _) => false,
                };
                if !eligible {
                    continue;
                }
                let dj = match self.status[j] {
                    Status::AtLower => d[j].max(0.0),
                    _ => (-d[j]).max(0.0),
                };
                let ratio = dj / alpha.abs();
                let better = match entering {
                    None => true,
                    Some((_, best, best_alpha)) => {
                        ratio < best - TIE_TOL
                            || (ratio <= best + TIE_TOL && !bland && alpha.abs() > best_alpha + TIE_TOL)
                    }
                };
                if better {
                    entering = Some((j, ratio, alpha.abs()));
                }
            }
            let Some((q, ratio, _)) = entering else {
                return Err(Error::Solver("problem infeasible (dual ray)".into()));
            };
            degenerate_run = if ratio <= TIE_TOL { degenerate_run + 1 } else { 0 };
            self.bump()?;

            let leaving = self.basis[r];
            self.pivot(r, q);
            self.status[q] = Status::Basic;
            if to_lower {
                self.status[leaving] = Status::AtLower;
                self.x[leaving] = self.lower[leaving];
            } else {
                self.status[leaving] = Status::AtUpper;
                self.x[leaving] = self.upper[leaving];
            }
            self.recompute_basic();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn textbook_maximization() {
        // max x + y  s.t. x + 2y <= 4, 3x + y <= 6  ->  (1.6, 1.2)
        let mut lp = LpBuilder::default();
        let x = lp.add_var(0.0, INF, -1.0);
        let y = lp.add_var(0.0, INF, -1.0);
        lp.add_row(vec![(x, 1.0), (y, 2.0)], RowKind::Le, 4.0);
        lp.add_row(vec![(x, 3.0), (y, 1.0)], RowKind::Le, 6.0);
        let mut t = Tableau::new(lp);
        t.solve().unwrap();
        assert!(close(t.value(x), 1.6));
        assert!(close(t.value(y), 1.2));
        assert!(close(t.objective_value(), -2.8));
    }

    #[test]
    fn equality_rows_and_upper_bounds() {
        // min x - y  s.t. x + y = 5, x <= 4, y <= 3  ->  x = 2, y = 3
        let mut lp = LpBuilder::default();
        let x = lp.add_var(0.0, 4.0, 1.0);
        let y = lp.add_var(0.0, 3.0, -1.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowKind::Eq, 5.0);
        let mut t = Tableau::new(lp);
        t.solve().unwrap();
        assert!(close(t.value(x), 2.0));
        assert!(close(t.value(y), 3.0));
    }

    #[test]
    fn negative_rhs_le_row() {
        // min x  s.t. -x <= -3  ->  x = 3
        let mut lp = LpBuilder::default();
        let x = lp.add_var(0.0, INF, 1.0);
        lp.add_row(vec![(x, -1.0)], RowKind::Le, -3.0);
        let mut t = Tableau::new(lp);
        t.solve().unwrap();
        assert!(close(t.value(x), 3.0));
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LpBuilder::default();
        let x = lp.add_var(0.0, 1.0, 1.0);
        lp.add_row(vec![(x, 1.0)], RowKind::Eq, 2.0);
        assert!(Tableau::new(lp).solve().is_err());
    }

    #[test]
    fn beale_cycling_example_terminates() {
        let mut lp = LpBuilder::default();
        let x4 = lp.add_var(0.0, INF, -0.75);
        let x5 = lp.add_var(0.0, INF, 20.0);
        let x6 = lp.add_var(0.0, INF, -0.5);
        let x7 = lp.add_var(0.0, INF, 6.0);
        lp.add_row(vec![(x4, 0.25), (x5, -8.0), (x6, -1.0), (x7, 9.0)], RowKind::Le, 0.0);
        lp.add_row(vec![(x4, 0.5), (x5, -12.0), (x6, -0.5), (x7, 3.0)], RowKind::Le, 0.0);
        lp.add_row(vec![(x6, 1.0)], RowKind::Le, 1.0);
        let mut t = Tableau::new(lp);
        t.solve().unwrap();
        assert!(close(t.objective_value(), -1.25));
    }

    #[test]
    fn warm_resolve_matches_cold() {
        let build = |b1: f64, b2: f64| {
            let mut lp = LpBuilder::default();
            let x = lp.add_var(0.0, INF, -1.0);
            let y = lp.add_var(0.0, INF, -1.0);
            lp.add_row(vec![(x, 1.0), (y, 2.0)], RowKind::Le, b1);
            lp.add_row(vec![(x, 3.0), (y, 1.0)], RowKind::Le, b2);
            lp
        };
        let mut warm = Tableau::new(build(4.0, 6.0));
        warm.solve().unwrap();
        for (b1, b2) in [(8.0, 6.0), (1.0, 9.0), (10.0, 1.0), (4.0, 6.0)] {
            warm.set_rhs(0, b1);
            warm.set_rhs(1, b2);
            warm.resolve().unwrap();
            let mut cold = Tableau::new(build(b1, b2));
            cold.solve().unwrap();
            assert!(close(warm.objective_value(), cold.objective_value()));
        }
    }
}
