//! Exact Lipschitz-constrained ERM with McShane–Whitney extension.
//!
//! On a sample with distinct input points `x_1..x_G` the empirical problem
//! over `L`-Lipschitz functions only depends on the values `v_g = f(x_g)`,
//! which must satisfy `|v_g − v_h| ≤ L‖x_g − x_h‖`. Any such vector extends to
//! an `L`-Lipschitz function on the whole cube, so solving for `v` solves the
//! ERM exactly. Repeated inputs are merged first; for squared loss the
//! problem becomes a weighted projection of the group means onto the
//! constraint set, solved with Dykstra's cyclic projections.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_budget, euclidean, FitError, Result, Samples};
use crate::oracle::{weighted_quantile, LossFn, LossKind};
use crate::predictor::Predictor;

/// Tolerance accepted on anchor feasibility.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop once every pairwise constraint holds to this margin ...
    pub violation_tol: f64,
    /// ... and the objective moved less than this over the last sweep.
    pub objective_tol: f64,
    pub max_sweeps: usize,
    /// Outer iterations of projected subgradient for non-squared losses.
    pub subgradient_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { violation_tol: 1e-8, objective_tol: 1e-10, max_sweeps: 100_000, subgradient_iters: 2_000 }
    }
}

/// An `L`-Lipschitz function given by anchor values and evaluated through
/// the midpoint of its upper and lower Lipschitz envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzFn {
    dim: usize,
    out: usize,
    budget: f64,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl LipschitzFn {
    /// Anchors must be feasible for `budget` up to [`FEASIBILITY_TOLERANCE`].
    pub fn from_anchors(dim: usize, out: usize, budget: f64, points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_budget(budget)?;
        if dim == 0 || out == 0 || points.len() % dim != 0 || values.len() != points.len() / dim * out {
            return Err(FitError::Dimension(alloc::format!(
                "{} point values and {} anchor values for dim {dim}, out {out}",
                points.len(),
                values.len()
            )));
        }
        if points.is_empty() {
            return Err(FitError::EmptySample);
        }
        let f = Self { dim, out, budget, points, values };
        if let Some((i, j, excess)) = f.worst_violation() {
            if excess > FEASIBILITY_TOLERANCE {
                return Err(FitError::Infeasible { i, j, excess });
            }
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.out..(i + 1) * self.out]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest `|v_i − v_j| − L‖x_i − x_j‖` over anchor pairs and outputs.
    pub fn worst_violation(&self) -> Option<(usize, usize, f64)> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let bound = self.budget * euclidean(self.point(i), self.point(j));
                for (a, b) in self.value(i).iter().zip(self.value(j)) {
                    let excess = libm::fabs(a - b) - bound;
                    if worst.map_or(true, |w| excess > w.2) {
                        worst = Some((i, j, excess));
                    }
                }
            }
        }
        worst
    }

    /// `min_i (v_i + L‖x − x_i‖)` and `max_i (v_i − L‖x − x_i‖)` per output.
    pub fn envelopes(&self, x: &[f64], upper: &mut [f64], lower: &mut [f64]) {
        upper.iter_mut().for_each(|u| *u = f64::INFINITY);
        lower.iter_mut().for_each(|l| *l = f64::NEG_INFINITY);
        for i in 0..self.len() {
            let r = self.budget * euclidean(x, self.point(i));
            for ((u, l), v) in upper.iter_mut().zip(lower.iter_mut()).zip(self.value(i)) {
                *u = u.min(v + r);
                *l = l.max(v - r);
            }
        }
    }

    /// Replaces each anchor value by the envelope midpoint at its own
    /// point. The midpoint is exactly `L`-Lipschitz, so this removes the
    /// small residual violations an iterative solver leaves behind; feasible
    /// anchors are unchanged.
    fn snap_to_envelope(&mut self) {
        let g = self.len();
        let mut snapped = vec![0.0; self.values.len()];
        if self.dim == 1 {
            // envelopes along the sorted line in two passes
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| self.points[a].total_cmp(&self.points[b]));
            for k in 0..self.out {
                let v = |i: usize| self.values[i * self.out + k];
                let mut upper: Vec<f64> = order.iter().map(|&i| v(i)).collect();
                let mut lower = upper.clone();
                for r in 1..g {
                    let step = self.budget * (self.points[order[r]] - self.points[order[r - 1]]);
                    upper[r] = upper[r].min(upper[r - 1] + step);
                    lower[r] = lower[r].max(lower[r - 1] - step);
                }
                for r in (0..g.saturating_sub(1)).rev() {
                    let step = self.budget * (self.points[order[r + 1]] - self.points[order[r]]);
                    upper[r] = upper[r].min(upper[r + 1] + step);
                    lower[r] = lower[r].max(lower[r + 1] - step);
                }
                for (r, &i) in order.iter().enumerate() {
                    snapped[i * self.out + k] = 0.5 * (upper[r] + lower[r]);
                }
            }
        } else {
            for i in 0..g {
                let p = self.point(i).to_vec();
                self.eval_unclipped(&p, &mut snapped[i * self.out..(i + 1) * self.out]);
            }
        }
        self.values = snapped;
    }

    /// Midpoint extension without clipping to `[0,1]`.
    pub fn eval_unclipped(&self, x: &[f64], out: &mut [f64]) {
        let mut lower = vec![0.0; self.out];
        self.envelopes(x, out, &mut lower);
        for (o, l) in out.iter_mut().zip(&lower) {
            *o = 0.5 * (*o + l);
        }
    }
}

impl Predictor for LipschitzFn {
    fn output_dim(&self) -> usize {
        self.out
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        self.eval_unclipped(x, out);
        out.iter_mut().for_each(|o| *o = o.clamp(0.0, 1.0));
    }
}

#[derive(Debug, Clone, Copy)]
struct Constraint {
    i: usize,
    j: usize,
    bound: f64,
}

/// Pairwise constraints over distinct points. In one dimension the
/// constraints between neighbours in sorted order imply all the others.
fn constraints(points: &[&[f64]], budget: f64) -> Vec<Constraint> {
    let dim = points.first().map_or(0, |p| p.len());
    if dim == 1 {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
        order
            .windows(2)
            .map(|w| Constraint { i: w[0], j: w[1], bound: budget * (points[w[1]][0] - points[w[0]][0]) })
            .collect()
    } else {
        let mut out = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                out.push(Constraint { i, j, bound: budget * euclidean(points[i], points[j]) });
            }
        }
        out
    }
}

fn max_violation(v: &[f64], cons: &[Constraint]) -> f64 {
    cons.iter().map(|c| libm::fabs(v[c.i] - v[c.j]) - c.bound).fold(0.0, f64::max)
}

/// Projection of `start` onto the constraint set in the norm
/// `Σ_g w_g v_g²`, by Dykstra's algorithm over the pairwise slabs.
fn dykstra(start: &[f64], weights: &[f64], cons: &[Constraint], opts: &FitOptions) -> Result<Vec<f64>> {
    let mut v = start.to_vec();
    if max_violation(&v, cons) <= opts.violation_tol {
        return Ok(v);
    }
    let objective =
        |v: &[f64]| -> f64 { v.iter().zip(start).zip(weights).map(|((a, b), w)| w * (a - b) * (a - b)).sum() };
    let mut increments = vec![(0.0, 0.0); cons.len()];
    let mut previous = objective(&v);
    let mut violation = f64::INFINITY;
    let mut sweep = 0;
    while sweep < opts.max_sweeps {
        for (c, inc) in cons.iter().zip(increments.iter_mut()) {
            let zi = v[c.i] + inc.0;
            let zj = v[c.j] + inc.1;
            let gap = zi - zj;
            let excess = gap - gap.clamp(-c.bound, c.bound);
            let (pi, pj) = if excess == 0.0 {
                (zi, zj)
            } else {
                let (ri, rj) = (1.0 / weights[c.i], 1.0 / weights[c.j]);
                let share = ri / (ri + rj);
                (zi - excess * share, zj + excess * (1.0 - share))
            };
            *inc = (zi - pi, zj - pj);
            v[c.i] = pi;
            v[c.j] = pj;
        }
        violation = max_violation(&v, cons);
        let current = objective(&v);
        if violation <= opts.violation_tol && libm::fabs(current - previous) <= opts.objective_tol {
            return Ok(polish(start, weights, cons, &increments).unwrap_or(v));
        }
        previous = current;
        sweep += 1;
        if sweep % POLISH_EVERY == 0 {
            if let Some(exact) = polish(start, weights, cons, &increments) {
                return Ok(exact);
            }
        }
    }
    Err(FitError::NoConvergence { sweeps: opts.max_sweeps, violation })
}

const POLISH_EVERY: usize = 25;

/// Solves the projection exactly on the active set suggested by Dykstra's
/// increments and returns it only if it satisfies the optimality conditions:
/// every constraint holds and every multiplier is nonnegative.
fn polish(start: &[f64], weights: &[f64], cons: &[Constraint], increments: &[(f64, f64)]) -> Option<Vec<f64>> {
    // active rows s·(v_i − v_j) = bound
    let active: Vec<(Constraint, f64)> =
        cons.iter().zip(increments).filter(|(_, inc)| inc.0 != 0.0).map(|(c, inc)| (*c, inc.0.signum())).collect();
    if active.is_empty() {
        return None;
    }
    let inv: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let gram = |a: &(Constraint, f64), b: &(Constraint, f64)| -> f64 {
        let (ca, sa) = a;
        let (cb, sb) = b;
        let mut g = 0.0;
        for (ia, va) in [(ca.i, 1.0), (ca.j, -1.0)] {
            for (ib, vb) in [(cb.i, 1.0), (cb.j, -1.0)] {
                if ia == ib {
                    g += va * vb * inv[ia];
                }
            }
        }
        sa * sb * g
    };
    // greedy Cholesky over a linearly independent subset
    let mut kept: Vec<usize> = Vec::new();
    let mut chol: Vec<Vec<f64>> = Vec::new();
    for (a, row) in active.iter().enumerate() {
        let diag = gram(row, row);
        let mut y = Vec::with_capacity(kept.len() + 1);
        for (r, &k) in kept.iter().enumerate() {
            let dot: f64 = (0..r).map(|q| chol[r][q] * y[q]).sum();
            y.push((gram(&active[k], row) - dot) / chol[r][r]);
        }
        let rest = diag - y.iter().map(|v| v * v).sum::<f64>();
        if rest > 1e-10 * diag {
            y.push(libm::sqrt(rest));
            chol.push(y);
            kept.push(a);
        }
    }
    let rhs: Vec<f64> = kept
        .iter()
        .map(|&k| {
            let (c, sg) = active[k];
            sg * (start[c.i] - start[c.j]) - c.bound
        })
        .collect();
    let n = kept.len();
    let mut z = vec![0.0; n];
    for r in 0..n {
        let dot: f64 = (0..r).map(|q| chol[r][q] * z[q]).sum();
        z[r] = (rhs[r] - dot) / chol[r][r];
    }
    let mut mu = vec![0.0; n];
    for r in (0..n).rev() {
        let dot: f64 = (r + 1..n).map(|q| chol[q][r] * mu[q]).sum();
        mu[r] = (z[r] - dot) / chol[r][r];
    }
    let scale = mu.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v))).max(1e-300);
    if mu.iter().any(|m| *m < -1e-9 * scale) {
        return None;
    }
    let mut v = start.to_vec();
    for (&k, m) in kept.iter().zip(&mu) {
        let (c, sg) = active[k];
        v[c.i] -= inv[c.i] * sg * m;
        v[c.j] += inv[c.j] * sg * m;
    }
    (max_violation(&v, cons) <= 1e-12).then_some(v)
}

/// Minimizes the mean loss over all `budget`-Lipschitz functions on the
/// sample and returns the fitted anchors with their envelope extension.
pub fn mcshane_fit(samples: &Samples, budget: f64, loss: &LossFn) -> Result<LipschitzFn> {
    mcshane_fit_with(samples, budget, loss, &FitOptions::default())
}

pub fn mcshane_fit_with(samples: &Samples, budget: f64, loss: &LossFn, opts: &FitOptions) -> Result<LipschitzFn> {
    check_budget(budget)?;
    if samples.is_empty() {
        return Err(FitError::EmptySample);
    }
    let groups = samples.groups();
    let n = samples.len() as f64;
    let points: Vec<&[f64]> = groups.iter().map(|g| g.point.as_slice()).collect();
    let weights: Vec<f64> = groups.iter().map(|g| g.members.len() as f64 / n).collect();
    let cons = constraints(&points, budget);
    let out = samples.out();

    let mut values = vec![0.0; groups.len() * out];
    for j in 0..out {
        let solved = match loss.kind() {
            LossKind::Squared => {
                let means: Vec<f64> = groups
                    .iter()
                    .map(|g| g.members.iter().map(|&i| samples.y(i)[j]).sum::<f64>() / g.members.len() as f64)
                    .collect();
                dykstra(&means, &weights, &cons, opts)?
            }
            _ => {
                let targets: Vec<Vec<f64>> =
                    groups.iter().map(|g| g.members.iter().map(|&i| samples.y(i)[j]).collect()).collect();
                projected_subgradient(&targets, n, loss, &cons, opts)?
            }
        };
        for (g, v) in solved.into_iter().enumerate() {
            values[g * out + j] = v;
        }
    }

    let flat: Vec<f64> = groups.iter().flat_map(|g| g.point.iter().copied()).collect();
    let mut f = LipschitzFn { dim: samples.dim(), out, budget, points: flat, values };
    f.snap_to_envelope();
    Ok(f)
}

/// Projected subgradient descent with steps `c/√k`; returns the best
/// feasible iterate.
fn projected_subgradient(
    targets: &[Vec<f64>],
    n: f64,
    loss: &LossFn,
    cons: &[Constraint],
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let unit = vec![1.0; targets.len()];
    let objective = |v: &[f64]| -> f64 {
        v.iter().zip(targets).map(|(vg, ts)| ts.iter().map(|t| loss.coord(*vg, *t)).sum::<f64>()).sum::<f64>() / n
    };
    let level = match loss.kind() {
        LossKind::Pinball(t) => t,
        _ => 0.5,
    };
    let unconstrained: Vec<f64> = targets.iter().map(|ts| weighted_quantile(&vec![1.0; ts.len()], ts, level)).collect();
    if max_violation(&unconstrained, cons) <= opts.violation_tol {
        return Ok(unconstrained);
    }
    let mut v = dykstra(&unconstrained, &unit, cons, opts)?;
    let mut best = (objective(&v), v.clone());
    let spread =
        targets.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(*t), hi.max(*t)));
    let step0 = (spread.1 - spread.0).max(1e-3) * 0.5;
    let mut grad = vec![0.0; v.len()];
    for k in 1..=opts.subgradient_iters {
        for ((g, vg), ts) in grad.iter_mut().zip(&v).zip(targets) {
            *g = ts.iter().map(|t| loss.coord_grad(*vg, *t)).sum::<f64>() / n;
        }
        let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if norm == 0.0 {
            break;
        }
        let step = step0 / libm::sqrt(k as f64) / norm;
        let moved: Vec<f64> = v.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        v = dykstra(&moved, &unit, cons, opts)?;
        let f = objective(&v);
        if f < best.0 {
            best = (f, v.clone());
        }
    }
    Ok(best.1)
}
