//! Primal-dual interior point solver for the dual of the LFD program.
//!
//! For a detector `phi` on the pool let `g_1 = l(-phi)` and `g_2 = l(phi)`.
//! Then `D(phi) = sum_k max_{gamma_k} <gamma_k, g_k>` bounds the LFD
//! objective from above and its minimum equals the maximum of `F`. Writing
//! each inner maximization through its budget multiplier `lambda_k` and row
//! maxima `s_k[l]` gives the smooth convex program
//!
//! ```text
//! minimize   sum_k theta_k lambda_k + sum_{k,l} q_k[l] s_k[l]
//! subject to g_k(phi_m) - lambda_k C[l][m] - s_k[l] <= 0   for all k, l, m
//!            lambda_k >= 0
//! ```
//!
//! whose constraint multipliers are the transport plans. Quad uses
//! `l(t) = (1 + t)^2` and Hinge `l(t) = 1 + t` with `|phi| <= 1`, both
//! without the positive part: this leaves the minimum unchanged and makes
//! the constraints twice differentiable.

use nalgebra::{DMatrix, DVector};

use crate::distributions::Side;
use crate::lfd::{lmo_value, LfdProblem, TransportPlan};
use crate::psi::PsiKind;

const MAX_ITERS: usize = 200;
/// Fraction of the distance to the boundary taken per step.
const TO_BOUNDARY: f64 = 0.99;

pub(crate) struct DualStart {
    pub gamma1: TransportPlan,
    pub gamma2: TransportPlan,
    /// Exact objective of the plans.
    pub objective: f64,
    /// Smallest `D(phi)` over the iterates.
    pub bound: f64,
    pub iterations: usize,
}

/// `(l(t), l'(t), l''(t))` for the constraint functions.
fn generator(kind: PsiKind, t: f64) -> (f64, f64, f64) {
    match kind {
        PsiKind::Exp => {
            let e = t.exp();
            (e, e, e)
        }
        PsiKind::Log => {
            let a = std::f64::consts::LN_2;
            let s = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { t.exp() / (1.0 + t.exp()) };
            let v = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            (v / a, s / a, s * (1.0 - s) / a)
        }
        PsiKind::Quad => {
            let u = t + 1.0;
            (u * u, 2.0 * u, 2.0)
        }
        PsiKind::Hinge => (1.0 + t, 1.0, 0.0),
    }
}

struct Dual<'a> {
    problem: &'a LfdProblem,
    kind: PsiKind,
    n: usize,
    rows: [usize; 2],
    theta: [f64; 2],
    /// Plan constraints; the two `lambda_k >= 0` constraints follow them,
    /// then `phi_m <= 1` and `-phi_m <= 1` for Hinge.
    plan_constraints: usize,
    boxed: bool,
}

/// Constraint values and the derivative data of the plan constraints.
struct Eval {
    c: Vec<f64>,
    /// `g_k'(phi_m)` per side and column.
    d1: [Vec<f64>; 2],
    d2: [Vec<f64>; 2],
}

impl<'a> Dual<'a> {
    fn new(problem: &'a LfdProblem) -> Self {
        let n = problem.pool().len();
        let rows = [problem.row_mass(Side::First).len(), problem.row_mass(Side::Second).len()];
        let theta = [problem.theta(Side::First), problem.theta(Side::Second)];
        let kind = problem.family().kind;
        let plan_constraints = (rows[0] + rows[1]) * n;
        Self { problem, kind, n, rows, theta, plan_constraints, boxed: kind == PsiKind::Hinge }
    }

    fn dim(&self) -> usize {
        2 * self.n + 2
    }

    fn constraints(&self) -> usize {
        self.plan_constraints + 2 + if self.boxed { 2 * self.n } else { 0 }
    }

    fn box_offset(&self) -> usize {
        self.plan_constraints + 2
    }

    fn lambda(&self, k: usize) -> usize {
        self.n + k
    }

    fn s(&self, k: usize, l: usize) -> usize {
        self.n + 2 + if k == 0 { l } else { self.rows[0] + l }
    }

    fn side(k: usize) -> Side {
        if k == 0 {
            Side::First
        } else {
            Side::Second
        }
    }

    fn cost_row(&self, k: usize, l: usize) -> &[f64] {
        self.problem.costs().row(self.problem.row_offset(Self::side(k)) + l)
    }

    fn objective_gradient(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for k in 0..2 {
            c[self.lambda(k)] = self.theta[k];
            for (l, q) in self.problem.row_mass(Self::side(k)).iter().enumerate() {
                c[self.s(k, l)] = *q;
            }
        }
        c
    }

    fn evaluate(&self, x: &[f64]) -> Option<Eval> {
        let n = self.n;
        let mut e = Eval {
            c: Vec::with_capacity(self.constraints()),
            d1: [vec![0.0; n], vec![0.0; n]],
            d2: [vec![0.0; n], vec![0.0; n]],
        };
        let mut g = [vec![0.0; n], vec![0.0; n]];
        for m in 0..n {
            let (v, d, dd) = generator(self.kind, -x[m]);
            g[0][m] = v;
            e.d1[0][m] = -d;
            e.d2[0][m] = dd;
            let (v, d, dd) = generator(self.kind, x[m]);
            g[1][m] = v;
            e.d1[1][m] = d;
            e.d2[1][m] = dd;
        }
        for k in 0..2 {
            let lambda = x[self.lambda(k)];
            for l in 0..self.rows[k] {
                let s = x[self.s(k, l)];
                for (m, cost) in self.cost_row(k, l).iter().enumerate() {
                    e.c.push(g[k][m] - lambda * cost - s);
                }
            }
        }
        e.c.push(-x[self.lambda(0)]);
        e.c.push(-x[self.lambda(1)]);
        if self.boxed {
            e.c.extend(x[..n].iter().map(|p| p - 1.0));
            e.c.extend(x[..n].iter().map(|p| -p - 1.0));
        }
        e.c.iter().all(|v| v.is_finite()).then_some(e)
    }

    /// Calls `f(i, k, l, m, cost)` for every plan constraint.
    fn for_each_plan_constraint(&self, mut f: impl FnMut(usize, usize, usize, usize, f64)) {
        let mut i = 0;
        for k in 0..2 {
            for l in 0..self.rows[k] {
                for (m, cost) in self.cost_row(k, l).iter().enumerate() {
                    f(i, k, l, m, *cost);
                    i += 1;
                }
            }
        }
    }

    /// `J^T v` for a vector over the constraints.
    fn jacobian_transpose(&self, e: &Eval, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.for_each_plan_constraint(|i, k, l, m, cost| {
            out[m] += e.d1[k][m] * v[i];
            out[self.lambda(k)] -= cost * v[i];
            out[self.s(k, l)] -= v[i];
        });
        for k in 0..2 {
            out[self.lambda(k)] -= v[self.plan_constraints + k];
        }
        if self.boxed {
            let b = self.box_offset();
            for m in 0..self.n {
                out[m] += v[b + m] - v[b + self.n + m];
            }
        }
        out
    }

    fn jacobian(&self, e: &Eval, dx: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.constraints()];
        self.for_each_plan_constraint(|i, k, l, m, cost| {
            out[i] = e.d1[k][m] * dx[m] - cost * dx[self.lambda(k)] - dx[self.s(k, l)];
        });
        for k in 0..2 {
            out[self.plan_constraints + k] = -dx[self.lambda(k)];
        }
        if self.boxed {
            let b = self.box_offset();
            for m in 0..self.n {
                out[b + m] = dx[m];
                out[b + self.n + m] = -dx[m];
            }
        }
        out
    }

    /// `sum_i z_i grad^2 c_i + J^T diag(w) J`.
    fn reduced_matrix(&self, e: &Eval, z: &[f64], w: &[f64]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        self.for_each_plan_constraint(|i, k, l, m, cost| {
            let (li, si) = (self.lambda(k), self.s(k, l));
            let a = e.d1[k][m];
            let wi = w[i];
            h[(m, m)] += wi * a * a + z[i] * e.d2[k][m];
            h[(m, li)] -= wi * a * cost;
            h[(m, si)] -= wi * a;
            h[(li, li)] += wi * cost * cost;
            h[(li, si)] += wi * cost;
            h[(si, si)] += wi;
        });
        for k in 0..2 {
            let li = self.lambda(k);
            h[(li, li)] += w[self.plan_constraints + k];
        }
        if self.boxed {
            let b = self.box_offset();
            for m in 0..self.n {
                h[(m, m)] += w[b + m] + w[b + self.n + m];
            }
        }
        for i in 0..dim {
            for j in 0..i {
                let v = h[(i, j)] + h[(j, i)];
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    /// Transport plans from the multipliers, rescaled to exact row sums and
    /// pulled toward the diagonal plan if the budget is exceeded.
    fn plans(&self, z: &[f64]) -> (TransportPlan, TransportPlan) {
        let n = self.n;
        let mut idx = 0;
        let mut out = Vec::with_capacity(2);
        for k in 0..2 {
            let side = Self::side(k);
            let mass = self.problem.row_mass(side);
            let offset = self.problem.row_offset(side);
            let mut entries = z[idx..idx + self.rows[k] * n].iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
            idx += self.rows[k] * n;
            let mut cost = 0.0;
            for (l, q) in mass.iter().enumerate() {
                let row = &mut entries[l * n..(l + 1) * n];
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|v| *v *= q / sum);
                } else {
                    row[offset + l] = *q;
                }
                cost += row.iter().zip(self.cost_row(k, l)).map(|(v, c)| v * c).sum::<f64>();
            }
            if cost > self.theta[k] {
                let keep = self.theta[k] / cost;
                for (l, q) in mass.iter().enumerate() {
                    let row = &mut entries[l * n..(l + 1) * n];
                    row.iter_mut().for_each(|v| *v *= keep);
                    row[offset + l] += (1.0 - keep) * q;
                }
            }
            out.push(TransportPlan::from_dense(side, self.rows[k], n, entries, self.problem));
        }
        let gamma2 = out.pop().expect("two plans");
        let gamma1 = out.pop().expect("two plans");
        (gamma1, gamma2)
    }

    /// `D(phi)` for the detector part of `x`, with the exact generator.
    fn bound(&self, x: &[f64]) -> f64 {
        let family = self.problem.family();
        let g1: Vec<f64> = x[..self.n].iter().map(|p| family.ell(-p)).collect();
        let g2: Vec<f64> = x[..self.n].iter().map(|p| family.ell(*p)).collect();
        lmo_value(self.problem, Side::First, &g1) + lmo_value(self.problem, Side::Second, &g2)
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(v, d)| -v / d).fold(f64::INFINITY, f64::min)
}

/// Runs Mehrotra predictor-corrector iterations until the certified gap
/// `D(phi) - F(plans)` reaches `gap_tol` or progress stalls. Needs positive
/// radii on both sides; returns `None` otherwise.
pub(crate) fn interior_point(problem: &LfdProblem, gap_tol: f64) -> Option<DualStart> {
    let dual = Dual::new(problem);
    if !(dual.theta[0] > 0.0 && dual.theta[1] > 0.0) || dual.n == 0 {
        return None;
    }
    let dim = dual.dim();
    let big_m = dual.constraints();
    let mut x = vec![0.0; dim];
    for k in 0..2 {
        x[dual.lambda(k)] = 1.0;
        for l in 0..dual.rows[k] {
            x[dual.s(k, l)] = 2.0;
        }
    }
    let mut e = dual.evaluate(&x)?;
    let mut slack: Vec<f64> = e.c.iter().map(|c| -c).collect();
    let mut z = vec![0.0; big_m];
    dual.for_each_plan_constraint(|i, k, l, _, _| z[i] = dual.problem.row_mass(Dual::side(k))[l] / dual.n as f64);
    z[dual.plan_constraints..].iter_mut().for_each(|v| *v = 1.0);
    let c0 = DVector::from_vec(dual.objective_gradient());

    let mut best: Option<DualStart> = None;
    let mut best_bound = f64::INFINITY;
    for iter in 1..=MAX_ITERS {
        let mu = slack.iter().zip(&z).map(|(s, z)| s * z).sum::<f64>() / big_m as f64;
        let r_d = &c0 + dual.jacobian_transpose(&e, &z);
        let r_p: Vec<f64> = e.c.iter().zip(&slack).map(|(c, s)| c + s).collect();
        let w: Vec<f64> = z.iter().zip(&slack).map(|(z, s)| z / s).collect();
        let h = dual.reduced_matrix(&e, &z, &w);
        let chol = match h.clone().cholesky() {
            Some(ch) => ch,
            None => {
                let scale = h.diagonal().amax().max(1.0);
                (h + DMatrix::identity(dim, dim) * (1e-13 * scale)).cholesky()?
            }
        };
        // Newton direction for complementarity target `r_c`.
        let direction = |r_c: &[f64]| -> (DVector<f64>, Vec<f64>, Vec<f64>) {
            let u: Vec<f64> = (0..big_m).map(|i| w[i] * r_p[i] - r_c[i] / slack[i]).collect();
            let rhs = -(&r_d + dual.jacobian_transpose(&e, &u));
            let dx = chol.solve(&rhs);
            let jdx = dual.jacobian(&e, &dx);
            let dz: Vec<f64> = (0..big_m).map(|i| w[i] * (jdx[i] + r_p[i]) - r_c[i] / slack[i]).collect();
            let ds: Vec<f64> = (0..big_m).map(|i| -(r_c[i] + slack[i] * dz[i]) / z[i]).collect();
            (dx, dz, ds)
        };
        let r_aff: Vec<f64> = slack.iter().zip(&z).map(|(s, z)| s * z).collect();
        let (_, dz_a, ds_a) = direction(&r_aff);
        let a_aff = max_step(&slack, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
        let mu_aff = (0..big_m).map(|i| (slack[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i])).sum::<f64>()
            / big_m as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);
        let r_c: Vec<f64> = (0..big_m).map(|i| slack[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu).collect();
        let (dx, dz, ds) = direction(&r_c);
        let mut alpha = (TO_BOUNDARY * max_step(&slack, &ds).min(max_step(&z, &dz))).min(1.0);
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(v, d)| v + alpha * d).collect();
            if let Some(te) = dual.evaluate(&trial) {
                x = trial;
                e = te;
                for i in 0..big_m {
                    slack[i] += alpha * ds[i];
                    z[i] += alpha * dz[i];
                }
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }

        let (gamma1, gamma2) = dual.plans(&z[..dual.plan_constraints]);
        let objective = problem.objective_of_masses(&gamma1.column_sums(), &gamma2.column_sums());
        best_bound = best_bound.min(dual.bound(&x));
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(DualStart { gamma1, gamma2, objective, bound: best_bound, iterations: iter });
        }
        let incumbent = best.as_mut().expect("set above");
        incumbent.bound = best_bound;
        incumbent.iterations = iter;
        if best_bound - incumbent.objective <= gap_tol || mu < 1e-18 {
            break;
        }
    }
    best
}
