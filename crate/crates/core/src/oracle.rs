//! Exact optimal risk for finite Markov sources.
//!
//! The best long-run average loss any non-anticipating strategy can reach is
//! `L* = E[ min_y E[u(y, X_0) | last d observations] ]`. For a chain of
//! order at most `d` the outer expectation is a finite sum over the `K^d`
//! contexts weighted by the stationary law, and the inner minimum has a
//! closed form for the losses provided here.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::predictor::Predictor;
use crate::processes::{MarkovProcess, ProcessError};

/// Default cap on the number of enumerated contexts.
pub const DEFAULT_CONTEXT_CAP: usize = 1_000_000;
/// Bracket width at which golden-section search stops.
pub const GOLDEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("context {0:?} is outside the state space")]
    UnknownContext(Vec<usize>),
    #[error("{contexts} contexts exceed the enumeration cap {cap}")]
    ContextExplosion { contexts: u128, cap: usize },
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
}

pub type Result<T, E = OracleError> = core::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Squared,
    Absolute,
    /// Quantile loss at level `τ ∈ (0,1)`.
    Pinball(f64),
}

/// A loss `u(y, x)` on `[0,1]^n × [0,1]^n`, separable across coordinates,
/// convex and Lipschitz in `y`.
///
/// The constructors rescale each loss so that its per-coordinate Lipschitz
/// constant in `y` is 1 on `[0,1]`: squared loss is halved, pinball loss is
/// divided by `max(τ, 1−τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossFn {
    kind: LossKind,
    scale: f64,
}

impl LossFn {
    pub fn squared() -> Self {
        Self { kind: LossKind::Squared, scale: 0.5 }
    }

    pub fn absolute() -> Self {
        Self { kind: LossKind::Absolute, scale: 1.0 }
    }

    pub fn pinball(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(OracleError::InvalidLoss(format!("pinball level {tau} outside (0,1)")));
        }
        Ok(Self { kind: LossKind::Pinball(tau), scale: 1.0 / tau.max(1.0 - tau) })
    }

    pub fn new(kind: LossKind) -> Result<Self> {
        match kind {
            LossKind::Squared => Ok(Self::squared()),
            LossKind::Absolute => Ok(Self::absolute()),
            LossKind::Pinball(t) => Self::pinball(t),
        }
    }

    /// The same loss multiplied by `c > 0`.
    pub fn scaled(self, c: f64) -> Self {
        Self { scale: self.scale * c, ..self }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Factor applied to the raw loss.
    pub fn rescale_factor(&self) -> f64 {
        self.scale
    }

    /// Lipschitz constant of the unscaled loss in `y` on `[0,1]`.
    pub fn raw_lipschitz(&self) -> f64 {
        match self.kind {
            LossKind::Squared => 2.0,
            LossKind::Absolute => 1.0,
            LossKind::Pinball(t) => t.max(1.0 - t),
        }
    }

    pub fn coord(&self, y: f64, x: f64) -> f64 {
        let raw = match self.kind {
            LossKind::Squared => (y - x) * (y - x),
            LossKind::Absolute => libm::fabs(y - x),
            LossKind::Pinball(t) => {
                if x >= y {
                    t * (x - y)
                } else {
                    (1.0 - t) * (y - x)
                }
            }
        };
        self.scale * raw
    }

    /// A subgradient of [`coord`](Self::coord) in `y` (zero at kinks of the
    /// absolute loss).
    pub fn coord_grad(&self, y: f64, x: f64) -> f64 {
        let raw = match self.kind {
            LossKind::Squared => 2.0 * (y - x),
            LossKind::Absolute => {
                if y > x {
                    1.0
                } else if y < x {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Pinball(t) => {
                if y > x {
                    1.0 - t
                } else if y < x {
                    -t
                } else {
                    0.0
                }
            }
        };
        self.scale * raw
    }

    pub fn value(&self, y: &[f64], x: &[f64]) -> f64 {
        y.iter().zip(x).map(|(a, b)| self.coord(*a, *b)).sum()
    }

    /// Minimizer of `Σ_i w_i · coord(y, x_i)` over `y ∈ [0,1]`, by closed
    /// form. Ties go to the smallest minimizer.
    pub fn argmin_weighted(&self, weights: &[f64], xs: &[f64]) -> f64 {
        match self.kind {
            LossKind::Squared => {
                let total: f64 = weights.iter().sum();
                let mean = weights.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / total;
                mean.clamp(0.0, 1.0)
            }
            LossKind::Absolute => weighted_quantile(weights, xs, 0.5),
            LossKind::Pinball(t) => weighted_quantile(weights, xs, t),
        }
    }
}

/// Smallest `q` with `P(X ≤ q) ≥ level` under the weighted empirical law.
pub fn weighted_quantile(weights: &[f64], xs: &[f64], level: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..xs.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= level * total - 1e-12 * total {
            return xs[i];
        }
    }
    order.last().map_or(0.5, |&i| xs[i])
}

/// Golden-section minimization of a convex function on `[lo, hi]`.
///
/// Returns the left end of the final bracket when the two probes tie, so
/// flat minima resolve toward smaller arguments.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi].into_iter().fold(mid, |best, c| if f(c) < f(best) { c } else { best })
}

/// Optimal action against a discrete law on embedded points, and its risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub action: Vec<f64>,
    pub risk: f64,
}

/// Closed-form minimizer of `Σ_s p_s u(y, e_s)`.
pub fn best_response(loss: &LossFn, probs: &[f64], points: &[&[f64]]) -> Action {
    let dim = points.first().map_or(0, |p| p.len());
    let mut action = vec![0.0; dim];
    let mut coords = vec![0.0; points.len()];
    for (j, a) in action.iter_mut().enumerate() {
        for (c, p) in coords.iter_mut().zip(points) {
            *c = p[j];
        }
        *a = loss.argmin_weighted(probs, &coords);
    }
    let risk = expected_loss_at(loss, probs, points, &action);
    Action { action, risk }
}

/// Same minimization by golden-section search per coordinate.
pub fn best_response_golden(loss: &LossFn, probs: &[f64], points: &[&[f64]]) -> Action {
    let dim = points.first().map_or(0, |p| p.len());
    let action: Vec<f64> = (0..dim)
        .map(|j| {
            let f = |y: f64| probs.iter().zip(points).map(|(p, e)| p * loss.coord(y, e[j])).sum::<f64>();
            golden_section(f, 0.0, 1.0, GOLDEN_TOLERANCE)
        })
        .collect();
    let risk = expected_loss_at(loss, probs, points, &action);
    Action { action, risk }
}

fn expected_loss_at(loss: &LossFn, probs: &[f64], points: &[&[f64]], y: &[f64]) -> f64 {
    probs.iter().zip(points).map(|(p, e)| if *p > 0.0 { p * loss.value(y, e) } else { 0.0 }).sum()
}

/// Law of the next state given a context (oldest state first).
pub fn conditional_distribution<'a>(process: &'a MarkovProcess, context: &[usize]) -> Result<&'a [f64]> {
    let idx = process.context_index(context).ok_or_else(|| OracleError::UnknownContext(context.to_vec()))?;
    Ok(process.kernel().row(idx))
}

/// Optimal action for one context of the process's own order.
pub fn optimal_action(process: &MarkovProcess, loss: &LossFn, context: &[usize]) -> Result<Action> {
    let probs = conditional_distribution(process, context)?;
    let points: Vec<&[f64]> = (0..process.states()).map(|s| process.embed(s)).collect();
    Ok(best_response(loss, probs, &points))
}

/// One context of length `ℓ` under the stationary law: its probability and
/// the conditional law of the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextLaw {
    pub context: Vec<usize>,
    pub weight: f64,
    pub next: Vec<f64>,
}

/// Stationary joint law of (context of length `len`, next state).
///
/// Works for any `len`: longer contexts extend the chain's own contexts by
/// the kernel, shorter ones marginalize them out.
pub fn context_laws(process: &MarkovProcess, len: usize, cap: usize) -> Result<Vec<ContextLaw>> {
    let k = process.states();
    let d = process.order();
    let count = (k as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(OracleError::ContextExplosion { contexts: count, cap });
    }
    let pi = process.stationary_distribution()?;
    let count = count as usize;
    let decode = |mut idx: usize| {
        let mut out = vec![0; len];
        for slot in out.iter_mut().rev() {
            *slot = idx % k;
            idx /= k;
        }
        out
    };

    let mut laws = Vec::with_capacity(count);
    if len >= d {
        for u in 0..count {
            let context = decode(u);
            let mut ctx = process.context_index(&context[..d]).expect("digits are valid states");
            let mut weight = pi[ctx];
            for &s in &context[d..] {
                if weight == 0.0 {
                    break;
                }
                weight *= process.kernel()[(ctx, s)];
                ctx = process.advance(ctx, s);
            }
            laws.push(ContextLaw { context, weight, next: process.kernel().row(ctx).to_vec() });
        }
    } else {
        let suffix_count = k.pow(len as u32);
        let mut weight = vec![0.0; suffix_count];
        let mut joint = vec![vec![0.0; k]; suffix_count];
        for (c, &p) in pi.iter().enumerate() {
            let suffix = c % suffix_count;
            weight[suffix] += p;
            for (j, q) in joint[suffix].iter_mut().zip(process.kernel().row(c)) {
                *j += p * q;
            }
        }
        for u in 0..count {
            let next = if weight[u] > 0.0 {
                joint[u].iter().map(|j| j / weight[u]).collect()
            } else {
                vec![1.0 / k as f64; k]
            };
            laws.push(ContextLaw { context: decode(u), weight: weight[u], next });
        }
    }
    Ok(laws)
}

/// Flattened embedding of a context tuple.
pub fn embed_context(process: &MarkovProcess, context: &[usize]) -> Vec<f64> {
    context.iter().flat_map(|&s| process.embed(s).iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRisk {
    pub context: Vec<usize>,
    pub weight: f64,
    pub action: Vec<f64>,
    pub risk: f64,
}

/// `L*` and the per-context table behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalRisk {
    pub value: f64,
    pub memory: usize,
    pub per_context: Vec<ContextRisk>,
}

impl OptimalRisk {
    /// Entry for a context of length `memory`.
    pub fn lookup(&self, context: &[usize]) -> Option<&ContextRisk> {
        self.per_context.iter().find(|c| c.context == context)
    }
}

/// Exact `L*` with memory `d` by enumeration of all `K^d` contexts.
pub fn optimal_risk(process: &MarkovProcess, loss: &LossFn, d: usize) -> Result<OptimalRisk> {
    optimal_risk_capped(process, loss, d, DEFAULT_CONTEXT_CAP)
}

pub fn optimal_risk_capped(process: &MarkovProcess, loss: &LossFn, d: usize, cap: usize) -> Result<OptimalRisk> {
    let points: Vec<&[f64]> = (0..process.states()).map(|s| process.embed(s)).collect();
    let mut value = 0.0;
    let per_context = context_laws(process, d, cap)?
        .into_iter()
        .map(|law| {
            let Action { action, risk } = best_response(loss, &law.next, &points);
            value += law.weight * risk;
            ContextRisk { context: law.context, weight: law.weight, action, risk }
        })
        .collect();
    Ok(OptimalRisk { value, memory: d, per_context })
}

/// Exact stationary risk of always playing `action`.
pub fn constant_action_risk(process: &MarkovProcess, loss: &LossFn, action: &[f64]) -> Result<f64> {
    let marginal = process.state_marginal()?;
    Ok(marginal.iter().enumerate().map(|(s, p)| p * loss.value(action, process.embed(s))).sum())
}

/// Exact stationary risk `E u(f(X_{t−d}^{t−1}), X_t)` of a fixed predictor
/// reading `d` past observations.
pub fn expected_predictor_loss<P: Predictor + ?Sized>(
    process: &MarkovProcess,
    loss: &LossFn,
    d: usize,
    predictor: &P,
) -> Result<f64> {
    let laws = context_laws(process, d, DEFAULT_CONTEXT_CAP)?;
    let mut y = vec![0.0; predictor.output_dim()];
    let mut total = 0.0;
    for law in laws.iter().filter(|l| l.weight > 0.0) {
        predictor.predict_into(&embed_context(process, &law.context), &mut y);
        let risk: f64 = law.next.iter().enumerate().map(|(s, p)| p * loss.value(&y, process.embed(s))).sum();
        total += law.weight * risk;
    }
    Ok(total)
}
