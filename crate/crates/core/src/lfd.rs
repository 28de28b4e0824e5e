//! Least favorable distributions over a pair of Wasserstein balls.
//!
//! The two balls are centred at empirical distributions `Q1`, `Q2` whose
//! atoms are merged into one support pool of size `N = n1 + n2`. A feasible
//! point is a pair of transport plans: `gamma_k` moves each atom of `Q_k`
//! onto pool points subject to `sum gamma_k * cost <= theta_k`. With
//! `p_k = column sums of gamma_k`, the solver maximizes
//!
//! ```text
//! F(gamma_1, gamma_2) = sum_m h(p_1[m], p_2[m])
//! ```
//!
//! which is concave. Plans store only the `n_k` source rows of each side.
//!
//! [`solve`] first runs a primal-dual interior point method on the dual
//! program, whose detector also certifies an upper bound, and then polishes
//! with pairwise Frank-Wolfe using an exact linear maximization oracle
//! ([`lmo`]) and exact line search. [`brute_force`] is a nested grid search
//! for instances with at most three pool points, used to cross-check the
//! solver.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{cost_matrix, merge_supports, min_cost_transport, CostMatrix, EmpiricalDistribution, NormKind, Side, SupportPool};
use crate::dual;
use crate::error::{Result, WrhtError};
use crate::psi::{PsiFamily, PsiKind, CLAMP_CAP, OBJECTIVE_TOL};

/// The solver works on `sum h(p1 + SHIFT, p2 + SHIFT)`, which is smooth on
/// the whole feasible set; reported objectives use the exact `h`.
pub const SHIFT: f64 = 1e-16;
/// Row-sum tolerance for a feasible transport plan.
pub const ROW_SUM_TOL: f64 = 1e-10;
/// Budget slack tolerated on `sum gamma * cost <= theta`.
pub const BUDGET_TOL: f64 = 1e-9;
/// Number of smoothing stages for the hinge family.
pub const HINGE_STAGES: usize = 4;
/// Ratio between consecutive hinge smoothing parameters.
pub const HINGE_MU_FACTOR: f64 = 4.0;

/// A transport plan for one side: `rows x cols`, row `l` is source atom `l`
/// of `Q_k`, column `m` is pool point `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    side: Side,
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    budget_used: f64,
}

impl TransportPlan {
    pub(crate) fn from_dense(side: Side, rows: usize, cols: usize, entries: Vec<f64>, problem: &LfdProblem) -> Self {
        let offset = problem.row_offset(side);
        let budget_used = (0..rows)
            .map(|l| {
                let c = problem.costs.row(offset + l);
                entries[l * cols..(l + 1) * cols].iter().zip(c).map(|(g, c)| g * c).sum::<f64>()
            })
            .sum();
        Self { side, rows, cols, entries, budget_used }
    }

    /// Builds a plan from nested rows, checking shape only.
    pub fn from_rows(side: Side, rows: Vec<Vec<f64>>, problem: &LfdProblem) -> Result<Self> {
        let n = problem.row_mass(side).len();
        let cols = problem.pool.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != cols) {
            return Err(WrhtError::InvalidInput(format!("plan must be {n} x {cols}")));
        }
        let entries = rows.into_iter().flatten().collect();
        Ok(Self::from_dense(side, n, cols, entries, problem))
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.entries[l * self.cols + m]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.entries[l * self.cols..(l + 1) * self.cols]
    }

    pub fn budget_used(&self) -> f64 {
        self.budget_used
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.cols];
        for l in 0..self.rows {
            for (pm, g) in p.iter_mut().zip(self.row(l)) {
                *pm += g;
            }
        }
        p
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|l| self.row(l).to_vec()).collect()
    }

    /// Checks row sums, nonnegativity and the budget against `problem`.
    pub fn check_feasible(&self, problem: &LfdProblem) -> Result<()> {
        let mass = problem.row_mass(self.side);
        if self.rows != mass.len() || self.cols != problem.pool.len() {
            return Err(WrhtError::Infeasible(format!(
                "plan shape {}x{} does not match problem {}x{}",
                self.rows,
                self.cols,
                mass.len(),
                problem.pool.len()
            )));
        }
        if self.entries.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(WrhtError::Infeasible("plan has negative or non-finite entries".into()));
        }
        for (l, w) in mass.iter().enumerate() {
            let s: f64 = self.row(l).iter().sum();
            if (s - w).abs() > ROW_SUM_TOL {
                return Err(WrhtError::Infeasible(format!("row {l} sums to {s}, expected {w}")));
            }
        }
        let theta = problem.theta(self.side);
        if self.budget_used > theta + BUDGET_TOL {
            return Err(WrhtError::Infeasible(format!(
                "transport cost {} exceeds budget {theta}",
                self.budget_used
            )));
        }
        Ok(())
    }
}

/// One instance of the LFD program.
#[derive(Debug, Clone)]
pub struct LfdProblem {
    pool: SupportPool,
    costs: CostMatrix,
    mass1: Vec<f64>,
    mass2: Vec<f64>,
    theta1: f64,
    theta2: f64,
    family: PsiFamily,
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_nan() || theta < 0.0 {
        return Err(WrhtError::InvalidInput(format!("radius must be >= 0, got {theta}")));
    }
    Ok(())
}

impl LfdProblem {
    pub fn new(
        q1: &EmpiricalDistribution,
        q2: &EmpiricalDistribution,
        norm: NormKind,
        theta1: f64,
        theta2: f64,
        family: PsiFamily,
    ) -> Result<Self> {
        let pool = merge_supports(q1, q2)?;
        let costs = cost_matrix(&pool, norm);
        Self::from_parts(pool, costs, q1.weights().to_vec(), q2.weights().to_vec(), theta1, theta2, family)
    }

    pub fn from_parts(
        pool: SupportPool,
        costs: CostMatrix,
        mass1: Vec<f64>,
        mass2: Vec<f64>,
        theta1: f64,
        theta2: f64,
        family: PsiFamily,
    ) -> Result<Self> {
        check_theta(theta1)?;
        check_theta(theta2)?;
        if costs.len() != pool.len() || mass1.len() != pool.n1() || mass2.len() != pool.n2() {
            return Err(WrhtError::InvalidInput("costs or masses inconsistent with the pool".into()));
        }
        for l in 0..costs.len() {
            if costs.row(l).iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(WrhtError::InvalidInput("cost matrix has non-finite entries".into()));
            }
        }
        Ok(Self { pool, costs, mass1, mass2, theta1, theta2, family })
    }

    /// Same instance with new radii; costs are reused.
    pub fn with_radii(&self, theta1: f64, theta2: f64) -> Result<Self> {
        check_theta(theta1)?;
        check_theta(theta2)?;
        Ok(Self { theta1, theta2, ..self.clone() })
    }

    pub fn pool(&self) -> &SupportPool {
        &self.pool
    }

    pub fn costs(&self) -> &CostMatrix {
        &self.costs
    }

    pub fn family(&self) -> PsiFamily {
        self.family
    }

    pub fn theta(&self, side: Side) -> f64 {
        match side {
            Side::First => self.theta1,
            Side::Second => self.theta2,
        }
    }

    pub fn row_mass(&self, side: Side) -> &[f64] {
        match side {
            Side::First => &self.mass1,
            Side::Second => &self.mass2,
        }
    }

    /// Pool index of row 0 of the given side.
    pub fn row_offset(&self, side: Side) -> usize {
        match side {
            Side::First => 0,
            Side::Second => self.pool.n1(),
        }
    }

    /// Empirical masses `Q_k` laid out over the pool.
    pub fn empirical_masses(&self, side: Side) -> Vec<f64> {
        let mut p = vec![0.0; self.pool.len()];
        let offset = self.row_offset(side);
        for (l, w) in self.row_mass(side).iter().enumerate() {
            p[offset + l] = *w;
        }
        p
    }

    /// Plan that leaves every atom in place (cost 0).
    pub fn diagonal_plan(&self, side: Side) -> TransportPlan {
        let n = self.row_mass(side).len();
        let cols = self.pool.len();
        let offset = self.row_offset(side);
        let mut entries = vec![0.0; n * cols];
        for (l, w) in self.row_mass(side).iter().enumerate() {
            entries[l * cols + offset + l] = *w;
        }
        TransportPlan::from_dense(side, n, cols, entries, self)
    }

    /// Exact objective `sum_m h(p1[m], p2[m])`.
    pub fn objective_of_masses(&self, p1: &[f64], p2: &[f64]) -> f64 {
        p1.iter().zip(p2).map(|(a, b)| self.family.h(a.max(0.0), b.max(0.0))).sum()
    }

    /// Gradient of the solver objective w.r.t. `p1` and `p2`.
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let n = self.pool.len();
        let mut g = vec![0.0; 2 * n];
        for m in 0..n {
            let (da, db) = self.family.grad_unchecked(p[m].max(0.0) + SHIFT, p[n + m].max(0.0) + SHIFT);
            g[m] = da;
            g[n + m] = db;
        }
        g
    }
}

/// Objective and per-column gradients of a feasible plan pair. The gradient
/// w.r.t. `gamma_k[l][m]` does not depend on `l`, so one vector per side is
/// returned.
pub fn objective_and_gradient(
    problem: &LfdProblem,
    gamma1: &TransportPlan,
    gamma2: &TransportPlan,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if gamma1.side() != Side::First || gamma2.side() != Side::Second {
        return Err(WrhtError::InvalidInput("plans passed in the wrong order".into()));
    }
    gamma1.check_feasible(problem)?;
    gamma2.check_feasible(problem)?;
    let p1 = gamma1.column_sums();
    let p2 = gamma2.column_sums();
    let objective = problem.objective_of_masses(&p1, &p2);
    let n = p1.len();
    let stacked: Vec<f64> = p1.iter().chain(&p2).copied().collect();
    let g = problem.gradient(&stacked);
    Ok((objective, g[..n].to_vec(), g[n..].to_vec()))
}

/// Where one row sends its mass at an LMO vertex: `1 - frac` to `from` and
/// `frac` to `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RowSplit {
    from: usize,
    to: usize,
    frac: f64,
}

struct Segment {
    slope: f64,
    row: usize,
    order: usize,
    from: usize,
    to: usize,
    dcost: f64,
}

/// Exact maximizer of `sum_{l,m} s[l][m] * g[m]` over plans of one side with
/// the given budget.
///
/// Each row's attainable (cost, gain) pairs have an upper concave envelope
/// starting at its best zero-cost column. Walking all envelope segments in
/// order of decreasing gain per unit cost and stopping when the budget runs
/// out is the Lagrangian solution: the slope of the last segment is the
/// budget multiplier, and only that segment's row is split.
///
/// Also returns that multiplier: the slope of the first segment not taken in
/// full, or 0 when the budget is slack.
fn lmo_splits(problem: &LfdProblem, side: Side, gradient: &[f64], theta: f64) -> (Vec<RowSplit>, f64) {
    let mass = problem.row_mass(side);
    let offset = problem.row_offset(side);
    let cols = problem.pool.len();

    let mut splits = Vec::with_capacity(mass.len());
    let mut segments = Vec::new();
    let mut order: Vec<usize> = (0..cols).collect();
    let mut hull: Vec<usize> = Vec::with_capacity(cols);

    for l in 0..mass.len() {
        let cost = problem.costs.row(offset + l);
        order.sort_by(|&a, &b| {
            cost[a]
                .total_cmp(&cost[b])
                .then(gradient[b].total_cmp(&gradient[a]))
                .then(a.cmp(&b))
        });
        hull.clear();
        for &m in &order {
            if let Some(&last) = hull.last() {
                if gradient[m] <= gradient[last] {
                    continue;
                }
            }
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                let lhs = (cost[b] - cost[a]) * (gradient[m] - gradient[b]);
                let rhs = (gradient[b] - gradient[a]) * (cost[m] - cost[b]);
                if lhs >= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(m);
        }
        splits.push(RowSplit { from: hull[0], to: hull[0], frac: 0.0 });
        for (k, w) in hull.windows(2).enumerate() {
            let dcost = cost[w[1]] - cost[w[0]];
            segments.push(Segment {
                slope: (gradient[w[1]] - gradient[w[0]]) / dcost,
                row: l,
                order: k,
                from: w[0],
                to: w[1],
                dcost,
            });
        }
    }

    segments.sort_by(|a, b| {
        b.slope
            .total_cmp(&a.slope)
            .then(a.row.cmp(&b.row))
            .then(a.order.cmp(&b.order))
    });
    let mut remaining = theta;
    let mut multiplier = 0.0;
    for seg in segments {
        if remaining <= 0.0 {
            multiplier = seg.slope;
            break;
        }
        let need = mass[seg.row] * seg.dcost;
        if need <= remaining {
            splits[seg.row] = RowSplit { from: seg.to, to: seg.to, frac: 0.0 };
            remaining -= need;
        } else {
            splits[seg.row] = RowSplit { from: seg.from, to: seg.to, frac: remaining / need };
            multiplier = seg.slope;
            break;
        }
    }
    (splits, multiplier)
}

/// Optimal value of the linear maximization oracle for `gradient`.
pub(crate) fn lmo_value(problem: &LfdProblem, side: Side, gradient: &[f64]) -> f64 {
    let (splits, _) = lmo_splits(problem, side, gradient, problem.theta(side));
    splits
        .iter()
        .zip(problem.row_mass(side))
        .map(|(s, w)| w * ((1.0 - s.frac) * gradient[s.from] + s.frac * gradient[s.to]))
        .sum()
}

/// Linear maximization oracle over the plans of one side with radius
/// `theta` (which may be infinite).
pub fn lmo(problem: &LfdProblem, side: Side, gradient: &[f64], theta: f64) -> Result<TransportPlan> {
    let cols = problem.pool.len();
    if gradient.len() != cols {
        return Err(WrhtError::DimensionMismatch { left: cols, right: gradient.len() });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(WrhtError::Domain("gradient must be finite".into()));
    }
    check_theta(theta)?;
    let (splits, _) = lmo_splits(problem, side, gradient, theta);
    let mass = problem.row_mass(side);
    let mut entries = vec![0.0; mass.len() * cols];
    for (l, s) in splits.iter().enumerate() {
        entries[l * cols + s.from] += mass[l] * (1.0 - s.frac);
        entries[l * cols + s.to] += mass[l] * s.frac;
    }
    Ok(TransportPlan::from_dense(side, mass.len(), cols, entries, problem))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Frank-Wolfe iterations; the interior point stage has its own cap.
    pub max_iters: usize,
    /// Stop once the certified gap falls to this value.
    pub gap_tol: f64,
    /// Bisection steps per line search.
    pub line_search_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 5_000, gap_tol: 1e-9, line_search_iters: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct LfdSolution {
    pub gamma1: TransportPlan,
    pub gamma2: TransportPlan,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    /// Exact objective (no hinge smoothing).
    pub objective: f64,
    pub divergence: f64,
    /// Certified bound on `optimum - objective`, from the Frank-Wolfe gap or
    /// the dual bound; NaN for [`brute_force`].
    pub fw_gap: f64,
    /// Interior point plus Frank-Wolfe iterations.
    pub iterations: usize,
    pub converged: bool,
}

impl LfdSolution {
    fn from_plans(
        problem: &LfdProblem,
        gamma1: TransportPlan,
        gamma2: TransportPlan,
        fw_gap: f64,
        iterations: usize,
        converged: bool,
    ) -> Result<Self> {
        let p1 = gamma1.column_sums();
        let p2 = gamma2.column_sums();
        let objective = problem.objective_of_masses(&p1, &p2).clamp(0.0, 2.0 + OBJECTIVE_TOL);
        let divergence = problem.family.divergence_of_value(objective)?;
        Ok(Self { gamma1, gamma2, p1, p2, objective, divergence, fw_gap, iterations, converged })
    }
}

/// Sparse rows, `(column, mass)` pairs, for both sides.
#[derive(Debug, Clone, PartialEq)]
struct Atom {
    rows: [Vec<Vec<(usize, f64)>>; 2],
    /// Column sums: `p1` followed by `p2`.
    p: Vec<f64>,
}

impl Atom {
    fn from_splits(problem: &LfdProblem, s1: &[RowSplit], s2: &[RowSplit]) -> Self {
        let n = problem.pool.len();
        let mut p = vec![0.0; 2 * n];
        let mut build = |side: Side, splits: &[RowSplit], base: usize| -> Vec<Vec<(usize, f64)>> {
            let mass = problem.row_mass(side);
            splits
                .iter()
                .zip(mass)
                .map(|(s, w)| {
                    let row = if s.frac > 0.0 && s.from != s.to {
                        vec![(s.from, w * (1.0 - s.frac)), (s.to, w * s.frac)]
                    } else {
                        vec![(s.from, *w)]
                    };
                    for &(m, v) in &row {
                        p[base + m] += v;
                    }
                    row
                })
                .collect()
        };
        let r1 = build(Side::First, s1, 0);
        let r2 = build(Side::Second, s2, n);
        Self { rows: [r1, r2], p }
    }

    fn from_plans(gamma1: &TransportPlan, gamma2: &TransportPlan) -> Self {
        let sparse = |g: &TransportPlan| -> Vec<Vec<(usize, f64)>> {
            (0..g.rows())
                .map(|l| g.row(l).iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(m, v)| (m, *v)).collect())
                .collect()
        };
        let p = gamma1.column_sums().into_iter().chain(gamma2.column_sums()).collect();
        Self { rows: [sparse(gamma1), sparse(gamma2)], p }
    }

    fn key(&self) -> Vec<u64> {
        let mut key = Vec::new();
        for side in &self.rows {
            for row in side {
                key.push(u64::MAX);
                for &(m, v) in row {
                    key.push(m as u64);
                    key.push(v.to_bits());
                }
            }
        }
        key
    }
}

/// Active set of the away-step iteration.
struct ActiveSet {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
    index: HashMap<Vec<u64>, usize>,
}

impl ActiveSet {
    fn single(atom: Atom) -> Self {
        let mut index = HashMap::new();
        index.insert(atom.key(), 0);
        Self { atoms: vec![atom], weights: vec![1.0], index }
    }

    fn point(&self, dim: usize) -> Vec<f64> {
        let mut p = vec![0.0; dim];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (pi, ai) in p.iter_mut().zip(&a.p) {
                *pi += w * ai;
            }
        }
        p
    }

    /// Moves `step` of weight from atom `from` onto `atom`, dropping `from`
    /// when its weight is exhausted.
    fn pairwise(&mut self, from: usize, atom: Atom, step: f64, exhaust: bool) {
        let key = atom.key();
        match self.index.get(&key) {
            Some(&i) => self.weights[i] += step,
            None => {
                self.index.insert(key, self.atoms.len());
                self.atoms.push(atom);
                self.weights.push(step);
            }
        }
        if exhaust {
            self.remove(from);
        } else {
            self.weights[from] -= step;
        }
    }

    /// Plain Frank-Wolfe update: scales every weight by `1 - step` and
    /// gives `step` to `atom`.
    fn toward(&mut self, atom: Atom, step: f64) {
        if step >= 1.0 {
            *self = Self::single(atom);
            return;
        }
        for w in &mut self.weights {
            *w *= 1.0 - step;
        }
        let key = atom.key();
        match self.index.get(&key) {
            Some(&i) => self.weights[i] += step,
            None => {
                self.index.insert(key, self.atoms.len());
                self.atoms.push(atom);
                self.weights.push(step);
            }
        }
    }

    /// Removes atom `i` and rescales the others to sum to one.
    fn drop(&mut self, i: usize) {
        let w = self.weights[i];
        self.remove(i);
        for v in &mut self.weights {
            *v /= 1.0 - w;
        }
    }

    fn remove(&mut self, i: usize) {
        self.index.remove(&self.atoms[i].key());
        self.atoms.swap_remove(i);
        self.weights.swap_remove(i);
        if i < self.atoms.len() {
            self.index.insert(self.atoms[i].key(), i);
        }
    }

    fn dense_plans(&self, problem: &LfdProblem) -> (TransportPlan, TransportPlan) {
        let cols = problem.pool.len();
        let dense = |side: Side, k: usize| {
            let rows = problem.row_mass(side).len();
            let mut entries = vec![0.0; rows * cols];
            for (a, w) in self.atoms.iter().zip(&self.weights) {
                for (l, row) in a.rows[k].iter().enumerate() {
                    for &(m, v) in row {
                        entries[l * cols + m] += w * v;
                    }
                }
            }
            TransportPlan::from_dense(side, rows, cols, entries, problem)
        };
        (dense(Side::First, 0), dense(Side::Second, 1))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact line search along `dir` from `p` on `[0, hi]`. The objective is
/// concave along the segment, so its directional derivative is decreasing
/// and the maximizer is found by bisection on the sign of the derivative.
/// Only columns touched by `dir` enter the derivative, which keeps it free
/// of cancellation against the full objective.
fn line_search(problem: &LfdProblem, p: &[f64], dir: &[f64], hi: f64, iters: usize) -> f64 {
    let n = problem.pool.len();
    let cols: Vec<usize> = (0..n).filter(|&m| dir[m] != 0.0 || dir[n + m] != 0.0).collect();
    let slope = |s: f64| -> f64 {
        cols.iter()
            .map(|&m| {
                let a = (p[m] + s * dir[m]).max(0.0) + SHIFT;
                let b = (p[n + m] + s * dir[n + m]).max(0.0) + SHIFT;
                let (ga, gb) = problem.family.grad_unchecked(a, b);
                ga * dir[m] + gb * dir[n + m]
            })
            .sum()
    };
    if slope(hi) >= 0.0 {
        return hi;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..iters {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if slope(mid) >= 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    lo
}

/// Solves the LFD program from the diagonal (no transport) plans.
pub fn solve(problem: &LfdProblem, config: &SolverConfig) -> Result<LfdSolution> {
    let start = Atom::from_plans(&problem.diagonal_plan(Side::First), &problem.diagonal_plan(Side::Second));
    optimize(problem, config, start)
}

/// Solves starting from a previous solution, e.g. one computed for smaller
/// radii. The starting plans must be feasible for `problem`.
pub fn solve_warm(problem: &LfdProblem, config: &SolverConfig, init: &LfdSolution) -> Result<LfdSolution> {
    init.gamma1.check_feasible(problem)?;
    init.gamma2.check_feasible(problem)?;
    let gamma1 = TransportPlan::from_dense(Side::First, init.gamma1.rows, init.gamma1.cols, init.gamma1.entries.clone(), problem);
    let gamma2 = TransportPlan::from_dense(Side::Second, init.gamma2.rows, init.gamma2.cols, init.gamma2.entries.clone(), problem);
    optimize(problem, config, Atom::from_plans(&gamma1, &gamma2))
}

/// Runs the dual interior point method first and returns its plans when
/// they are certified within `gap_tol`. Otherwise Frank-Wolfe continues
/// from the better of those plans and `start`, with the dual bound kept as
/// a second certificate. The hinge family is polished for a short sequence
/// of increasing smoothing parameters, starting at the family's own, each
/// stage warm-started from the previous one. The best exact objective seen,
/// including the starting point, is returned.
fn optimize(problem: &LfdProblem, config: &SolverConfig, start: Atom) -> Result<LfdSolution> {
    let (g1, g2) = ActiveSet::single(start.clone()).dense_plans(problem);
    let initial = LfdSolution::from_plans(problem, g1, g2, f64::INFINITY, 0, false)?;
    let mut start = start;
    let mut bound = f64::INFINITY;
    let mut interior = 0;
    if let Some(d) = dual::interior_point(problem, config.gap_tol) {
        interior = d.iterations;
        bound = d.bound;
        if d.objective >= initial.objective {
            let gap = bound - d.objective;
            if gap <= config.gap_tol {
                return LfdSolution::from_plans(problem, d.gamma1, d.gamma2, gap, interior, true);
            }
            start = Atom::from_plans(&d.gamma1, &d.gamma2);
        }
    }
    let mut best = if problem.family.kind != PsiKind::Hinge {
        run_frank_wolfe(problem, config, start, bound)?
    } else {
        let mut staged = problem.clone();
        let mut best: Option<LfdSolution> = None;
        let mut iterations = 0;
        for stage in 0..HINGE_STAGES {
            let mu = problem.family.smoothing_mu * HINGE_MU_FACTOR.powi(stage as i32);
            staged.family = PsiFamily::with_smoothing(PsiKind::Hinge, mu)?;
            let sol = run_frank_wolfe(&staged, config, start, f64::INFINITY)?;
            iterations += sol.iterations;
            start = Atom::from_plans(&sol.gamma1, &sol.gamma2);
            if best.as_ref().is_none_or(|b| sol.objective >= b.objective) {
                best = Some(sol);
            }
        }
        let mut best = best.expect("at least one stage");
        best.iterations = iterations;
        if bound.is_finite() {
            best.fw_gap = bound - best.objective;
            best.converged = best.fw_gap <= config.gap_tol;
        }
        best
    };
    best.iterations += interior;
    if best.objective < initial.objective {
        let fw_gap = if bound.is_finite() { bound - initial.objective } else { best.fw_gap };
        best = LfdSolution { iterations: best.iterations, fw_gap, converged: fw_gap <= config.gap_tol, ..initial };
    }
    Ok(best)
}

/// Columns whose total mass is at most this count as empty.
const EMPTY_MASS: f64 = 1e-10;

/// Active atoms below this weight may be dropped outright.
const DROP_WEIGHT: f64 = 1e-9;

/// `phi` minimizing `max(l(-phi) - u1, l(phi) - u2)` on `[-CLAMP_CAP, CLAMP_CAP]`.
fn balanced_value(family: PsiFamily, u1: f64, u2: f64) -> f64 {
    if u1.is_infinite() && u2.is_infinite() {
        return 0.0;
    }
    let excess = |phi: f64| (family.ell(phi) - u2) - (family.ell(-phi) - u1);
    let (mut lo, mut hi) = (-CLAMP_CAP, CLAMP_CAP);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// At a column with (almost) no mass on either side the gradient of `h`
/// depends only on the direction of approach, and any
/// `(l(-phi), l(phi))` is a supergradient at the origin. This picks `phi`
/// so that, at the oracle's current budget multipliers, neither side gains
/// by moving mass there. Returns the amount by which the linearization
/// at the true (tiny) masses can undershoot, to be added to the gap.
fn complete_empty_columns(problem: &LfdProblem, p: &[f64], g: &mut [f64]) -> f64 {
    let n = problem.pool.len();
    let mass = |m: usize| (p[m].max(0.0), p[n + m].max(0.0));
    let empty: Vec<usize> = (0..n).filter(|&m| mass(m).0 + mass(m).1 <= EMPTY_MASS).collect();
    if empty.is_empty() || empty.len() == n {
        return 0.0;
    }
    let mut is_empty = vec![false; n];
    for &m in &empty {
        is_empty[m] = true;
    }
    let mut upper = [vec![f64::INFINITY; n], vec![f64::INFINITY; n]];
    for (k, side) in [Side::First, Side::Second].into_iter().enumerate() {
        let gk = &g[k * n..(k + 1) * n];
        let low = (0..n).filter(|&m| !is_empty[m]).map(|m| gk[m]).fold(f64::INFINITY, f64::min);
        let mut blocked = gk.to_vec();
        for &m in &empty {
            blocked[m] = low - 1.0;
        }
        let (_, lambda) = lmo_splits(problem, side, &blocked, problem.theta(side));
        let offset = problem.row_offset(side);
        for l in 0..problem.row_mass(side).len() {
            let cost = problem.costs.row(offset + l);
            let value = (0..n)
                .filter(|&m| !is_empty[m])
                .map(|m| blocked[m] - lambda * cost[m])
                .fold(f64::NEG_INFINITY, f64::max);
            for &m in &empty {
                upper[k][m] = upper[k][m].min(value + lambda * cost[m]);
            }
        }
    }
    let family = problem.family;
    let mut correction = 0.0;
    for &m in &empty {
        let phi = balanced_value(family, upper[0][m], upper[1][m]);
        let (ga, gb) = (family.ell(-phi), family.ell(phi));
        g[m] = ga;
        g[n + m] = gb;
        let (a, b) = (mass(m).0 + SHIFT, mass(m).1 + SHIFT);
        correction += (ga * a + gb * b - family.h_smooth(a, b)).max(0.0);
    }
    correction
}

/// `bound` is an upper bound on the optimum of `problem`; the reported gap
/// is the smaller of the Frank-Wolfe gap and `bound - F`.
fn run_frank_wolfe(problem: &LfdProblem, config: &SolverConfig, start: Atom, bound: f64) -> Result<LfdSolution> {
    const REFRESH: usize = 64;
    let n = problem.pool.len();
    let dim = 2 * n;
    let mut active = ActiveSet::single(start);
    let mut p = active.point(dim);
    let mut fw_gap = bound - problem.objective_of_masses(&p[..n], &p[n..]);
    let mut converged = fw_gap <= config.gap_tol;
    let mut iterations = 0;

    for t in 0..config.max_iters {
        if converged {
            break;
        }
        if t % REFRESH == 0 {
            p = active.point(dim);
        }
        let mut g = problem.gradient(&p);
        let correction = complete_empty_columns(problem, &p, &mut g);
        let (s1, _) = lmo_splits(problem, Side::First, &g[..n], problem.theta1);
        let (s2, _) = lmo_splits(problem, Side::Second, &g[n..], problem.theta2);
        let vertex = Atom::from_splits(problem, &s1, &s2);

        fw_gap = (dot(&g, &vertex.p) - dot(&g, &p) + correction)
            .min(bound - problem.objective_of_masses(&p[..n], &p[n..]));
        if fw_gap <= config.gap_tol {
            converged = true;
            break;
        }

        // Pairwise step: shift weight from the worst active atom to the
        // oracle vertex.
        let (away_idx, _) = active
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| (i, dot(&g, &a.p)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let max_step = active.weights[away_idx];
        let dir: Vec<f64> = vertex.p.iter().zip(&active.atoms[away_idx].p).map(|(v, a)| v - a).collect();
        let step = line_search(problem, &p, &dir, max_step, config.line_search_iters);
        iterations = t + 1;
        if step < max_step && max_step <= DROP_WEIGHT && active.atoms.len() > 1 {
            // A nearly spent atom that the line search cannot exhaust: its
            // residue sits where the objective is not smooth. Dropping it
            // and renormalizing stays feasible and costs O(weight).
            let w = max_step;
            for (pi, ai) in p.iter_mut().zip(&active.atoms[away_idx].p) {
                *pi = (*pi - w * ai) / (1.0 - w);
            }
            active.drop(away_idx);
            continue;
        }
        if step > 0.0 {
            let exhaust = step >= max_step;
            for (pi, di) in p.iter_mut().zip(&dir) {
                *pi += step * di;
            }
            active.pairwise(away_idx, vertex, step, exhaust);
            continue;
        }
        // The away atom's weight is too small to move along; take a plain
        // Frank-Wolfe step instead.
        let dir: Vec<f64> = vertex.p.iter().zip(&p).map(|(v, x)| v - x).collect();
        let step = line_search(problem, &p, &dir, 1.0, config.line_search_iters);
        if step <= 0.0 {
            break;
        }
        for (pi, di) in p.iter_mut().zip(&dir) {
            *pi += step * di;
        }
        active.toward(vertex, step);
    }

    let (gamma1, gamma2) = active.dense_plans(problem);
    LfdSolution::from_plans(problem, gamma1, gamma2, fw_gap, iterations, converged)
}

/// Nested grid search for pools of at most 3 points.
///
/// The search runs over the column masses `(p1, p2)` directly. A candidate
/// `p_k` is pulled back along the segment towards the empirical masses
/// `q_k`, first into the simplex and then into the ball: under a metric cost
/// `W(q, q + t (p - q)) = t W(q, p)`, so the pull-back factor is exact.
/// Feasibility and the returned plans come from the exact transport solver.
/// Each level re-centres on the incumbent and halves the box.
pub fn brute_force(problem: &LfdProblem, grid_depth: usize) -> Result<LfdSolution> {
    const GRID_POINTS: usize = 7;
    let n = problem.pool.len();
    if n > 3 {
        return Err(WrhtError::TooLarge(format!("{n} pool points (at most 3 supported)")));
    }
    let free = n - 1;
    let dims = 2 * free;
    let sides = [Side::First, Side::Second];
    let q = [problem.empirical_masses(Side::First), problem.empirical_masses(Side::Second)];
    let cost_rows = |side: Side| -> Vec<Vec<f64>> {
        let offset = problem.row_offset(side);
        (0..problem.row_mass(side).len()).map(|l| problem.costs.row(offset + l).to_vec()).collect()
    };
    let costs = [cost_rows(Side::First), cost_rows(Side::Second)];

    // Feasible masses for one side from free coordinates.
    let pull_back = |k: usize, x: &[f64]| -> Vec<f64> {
        let qk = &q[k];
        let mut p: Vec<f64> = x.to_vec();
        p.push(1.0 - x.iter().sum::<f64>());
        let mut t: f64 = 1.0;
        for (pi, qi) in p.iter().zip(qk) {
            if *pi < 0.0 {
                t = t.min(qi / (qi - pi));
            }
        }
        let mut p: Vec<f64> = p.iter().zip(qk).map(|(pi, qi)| (qi + t * (pi - qi)).max(0.0)).collect();
        let (w, _) = min_cost_transport(problem.row_mass(sides[k]), &p, &costs[k]);
        let theta = problem.theta(sides[k]);
        if w > theta {
            let s = theta / w * (1.0 - 1e-12);
            p = p.iter().zip(qk).map(|(pi, qi)| (qi + s * (pi - qi)).max(0.0)).collect();
        }
        p
    };
    let value = |x: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        let p1 = pull_back(0, &x[..free]);
        let p2 = pull_back(1, &x[free..]);
        (problem.objective_of_masses(&p1, &p2), p1, p2)
    };

    let mut center: Vec<f64> = q[0][..free].iter().chain(&q[1][..free]).copied().collect();
    let (mut best_val, mut best_p1, mut best_p2) = value(&center);
    let mut radius = 1.0;
    let mut evaluations = 1;
    let mut x = vec![0.0; dims];
    let mut counter = vec![0usize; dims];

    // Two passes; the second restarts from the incumbent with a wider box.
    for level in 0..2 * grid_depth.max(1) {
        if level == grid_depth.max(1) {
            radius = 0.25;
        }
        counter.iter_mut().for_each(|c| *c = 0);
        loop {
            for d in 0..dims {
                let offset = radius * (2.0 * counter[d] as f64 / (GRID_POINTS - 1) as f64 - 1.0);
                x[d] = (center[d] + offset).clamp(0.0, 1.0);
            }
            let (val, p1, p2) = value(&x);
            evaluations += 1;
            if val > best_val {
                best_val = val;
                best_p1 = p1;
                best_p2 = p2;
            }
            let mut d = 0;
            while d < dims {
                counter[d] += 1;
                if counter[d] < GRID_POINTS {
                    break;
                }
                counter[d] = 0;
                d += 1;
            }
            if d == dims {
                break;
            }
        }
        center = best_p1[..free].iter().chain(&best_p2[..free]).copied().collect();
        radius *= 0.7;
    }

    let plan = |k: usize, p: &[f64]| -> TransportPlan {
        let side = sides[k];
        let (_, flow) = min_cost_transport(problem.row_mass(side), p, &costs[k]);
        TransportPlan::from_dense(side, flow.len(), n, flow.concat(), problem)
    };
    LfdSolution::from_plans(problem, plan(0, &best_p1), plan(1, &best_p2), f64::NAN, evaluations, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psi::PsiKind;

    fn atoms(points: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::uniform(points.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    fn two_atom(theta: f64, kind: PsiKind) -> LfdProblem {
        LfdProblem::new(&atoms(&[0.0]), &atoms(&[1.0]), NormKind::L2, theta, theta, kind.into()).unwrap()
    }

    #[test]
    fn lmo_budget_split() {
        let problem = two_atom(0.3, PsiKind::Exp);
        let plan = lmo(&problem, Side::First, &[0.0, 1.0], 0.3).unwrap();
        assert!((plan.get(0, 0) - 0.7).abs() < 1e-15);
        assert!((plan.get(0, 1) - 0.3).abs() < 1e-15);
        let value: f64 = plan.column_sums().iter().zip([0.0, 1.0]).map(|(p, g)| p * g).sum();
        assert!((value - 0.3).abs() < 1e-15);
        assert!((plan.budget_used() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn lmo_infinite_budget_takes_best_column() {
        let q1 = atoms(&[0.0, 1.0, 2.0]);
        let q2 = atoms(&[5.0, 7.0]);
        let problem = LfdProblem::new(&q1, &q2, NormKind::L1, 1.0, 1.0, PsiKind::Log.into()).unwrap();
        let g = [0.1, 0.4, -1.0, 2.0, 0.3];
        let plan = lmo(&problem, Side::First, &g, f64::INFINITY).unwrap();
        for l in 0..3 {
            assert!((plan.get(l, 3) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lmo_zero_budget_stays_on_zero_cost_columns() {
        // pool: 0, 1 | 0, 3  -> row 0 of side 1 may use column 2 (a duplicate)
        let q1 = atoms(&[0.0, 1.0]);
        let q2 = atoms(&[0.0, 3.0]);
        let problem = LfdProblem::new(&q1, &q2, NormKind::L2, 0.0, 0.0, PsiKind::Exp.into()).unwrap();
        let g = [0.0, 0.0, 1.0, 5.0];
        let plan = lmo(&problem, Side::First, &g, 0.0).unwrap();
        assert_eq!(plan.row(0), &[0.0, 0.0, 0.5, 0.0]);
        assert_eq!(plan.row(1), &[0.0, 0.5, 0.0, 0.0]);
        assert_eq!(plan.budget_used(), 0.0);
    }

    #[test]
    fn lmo_matches_vertex_enumeration() {
        // One row, three columns: enumerate all vertices of
        // {x >= 0, sum x = 1, c.x <= theta} and compare the best value.
        let q1 = atoms(&[0.0]);
        let q2 = atoms(&[1.0, 3.0]);
        let problem = LfdProblem::new(&q1, &q2, NormKind::L1, 0.0, 0.0, PsiKind::Exp.into()).unwrap();
        let c = [0.0, 1.0, 3.0];
        let g = [0.0, 1.0, 2.5];
        for theta in [0.0, 0.2, 0.9, 1.0, 1.7, 2.9, 3.5] {
            let mut best = f64::NEG_INFINITY;
            for i in 0..3 {
                if c[i] <= theta {
                    best = best.max(g[i]);
                }
                for j in 0..3 {
                    if c[i] < theta && c[j] > theta {
                        let t = (theta - c[i]) / (c[j] - c[i]);
                        best = best.max((1.0 - t) * g[i] + t * g[j]);
                    }
                }
            }
            let plan = lmo(&problem, Side::First, &g, theta).unwrap();
            let value: f64 = plan.row(0).iter().zip(g).map(|(x, g)| x * g).sum();
            assert!((value - best).abs() < 1e-12, "theta {theta}: {value} vs {best}");
            assert!(plan.budget_used() <= theta + 1e-15);
        }
    }

    #[test]
    fn two_atom_closed_form() {
        let problem = two_atom(0.25, PsiKind::Exp);
        let sol = solve(&problem, &SolverConfig::default()).unwrap();
        assert!((sol.objective - 3f64.sqrt()).abs() < 1e-6, "{}", sol.objective);
        // LFDs move 0.25 onto the opposite atom.
        assert!((sol.p1[1] - 0.25).abs() < 1e-4);
        assert!((sol.p2[0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn overlapping_balls_saturate() {
        let problem = two_atom(0.6, PsiKind::Exp);
        let sol = solve(&problem, &SolverConfig::default()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-8, "{}", sol.objective);
        assert!(sol.divergence.abs() < 1e-8);
    }

    #[test]
    fn zero_radius_identical_samples() {
        let q = atoms(&[0.0, 2.0]);
        let problem = LfdProblem::new(&q, &q, NormKind::L2, 0.0, 0.0, PsiKind::Log.into()).unwrap();
        let sol = solve(&problem, &SolverConfig::default()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_and_gradient_examples() {
        let problem = two_atom(0.5, PsiKind::Exp);
        let g1 = TransportPlan::from_rows(Side::First, vec![vec![0.5, 0.5]], &problem).unwrap();
        let g2 = TransportPlan::from_rows(Side::Second, vec![vec![0.5, 0.5]], &problem).unwrap();
        let (obj, d1, d2) = objective_and_gradient(&problem, &g1, &g2).unwrap();
        assert!((obj - 2.0).abs() < 1e-15);
        assert_eq!(d1, vec![1.0, 1.0]);
        assert_eq!(d2, vec![1.0, 1.0]);

        let d1 = problem.diagonal_plan(Side::First);
        let d2 = problem.diagonal_plan(Side::Second);
        assert_eq!(objective_and_gradient(&problem, &d1, &d2).unwrap().0, 0.0);

        let over = TransportPlan::from_rows(Side::First, vec![vec![0.0, 1.0]], &problem).unwrap();
        assert!(matches!(objective_and_gradient(&problem, &over, &g2), Err(WrhtError::Infeasible(_))));
    }

    #[test]
    fn brute_force_two_atom() {
        let sol = brute_force(&two_atom(0.25, PsiKind::Exp), 30).unwrap();
        assert!((sol.objective - 3f64.sqrt()).abs() < 1e-3, "{}", sol.objective);
        let sol = brute_force(&two_atom(0.6, PsiKind::Exp), 30).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-3);
    }

    #[test]
    fn brute_force_rejects_large_pools() {
        let problem = LfdProblem::new(&atoms(&[0.0, 1.0]), &atoms(&[2.0, 3.0]), NormKind::L2, 0.1, 0.1, PsiKind::Exp.into())
            .unwrap();
        assert!(matches!(brute_force(&problem, 5), Err(WrhtError::TooLarge(_))));
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(LfdProblem::new(&atoms(&[0.0]), &atoms(&[1.0]), NormKind::L2, -0.1, 0.1, PsiKind::Exp.into()).is_err());
    }
}
