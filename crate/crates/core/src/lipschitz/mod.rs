//! Lipschitz-constrained empirical risk minimization.
//!
//! Two fitters share the [`Samples`] container:
//!
//! * [`envelope`] solves the empirical problem over all `L`-Lipschitz
//!   functions exactly on the sample (anchor values under pairwise
//!   constraints) and extends it off-sample with the McShane–Whitney
//!   midpoint, which keeps the constant `L`.
//! * [`spectral`] trains a ReLU network whose layers are rescaled after every
//!   step so that the product of their operator norms stays within `L`.
//!
//! [`Schedule`] grows the budget with the horizon.

pub mod envelope;
pub mod spectral;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::predictor::Predictor;

pub use envelope::{mcshane_fit, mcshane_fit_with, FitOptions, LipschitzFn};
pub use spectral::{mlp_fit, model_lipschitz_bound, project_spectral, spectral_norm, MlpConfig, SpectralMlp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("at least one sample is required")]
    EmptySample,
    #[error("Lipschitz budget must be positive and finite, got {0}")]
    InvalidBudget(f64),
    #[error("constraint solver did not converge after {sweeps} sweeps (violation {violation:e})")]
    NoConvergence { sweeps: usize, violation: f64 },
    #[error("pair {0} has identical points")]
    DegeneratePair(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("anchors {i} and {j} violate the Lipschitz budget by {excess:e}")]
    Infeasible { i: usize, j: usize, excess: f64 },
}

pub type Result<T, E = FitError> = core::result::Result<T, E>;

/// Training pairs `(x_i, y_i)`, `x_i ∈ [0,1]^dim`, `y_i ∈ R^out`, stored flat.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    dim: usize,
    out: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, out: usize) -> Self {
        Self { dim, out, xs: Vec::new(), ys: Vec::new() }
    }

    /// Panics when `x` or `y` has the wrong length.
    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.dim, "input dimension");
        assert_eq!(y.len(), self.out, "output dimension");
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
    }

    pub fn from_pairs<'a, I>(dim: usize, out: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let mut s = Self::new(dim, out);
        for (x, y) in pairs {
            s.push(x, y);
        }
        s
    }

    pub fn len(&self) -> usize {
        if self.out == 0 {
            0
        } else {
            self.ys.len() / self.out
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out(&self) -> usize {
        self.out
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.out..(i + 1) * self.out]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }

    /// Samples sharing an input point, in first-seen order.
    pub fn groups(&self) -> Vec<Group> {
        let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut groups: Vec<Group> = Vec::new();
        for i in 0..self.len() {
            let key: Vec<u64> = self.x(i).iter().map(|v| (v + 0.0).to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(Group { point: self.x(i).to_vec(), members: Vec::new() });
                groups.len() - 1
            });
            groups[g].members.push(i);
        }
        groups
    }

    /// Mean loss of `f` on the sample.
    pub fn empirical_loss<P: Predictor + ?Sized>(&self, f: &P, loss: &crate::oracle::LossFn) -> f64 {
        let mut y = alloc::vec![0.0; self.out];
        let total: f64 = self
            .iter()
            .map(|(x, target)| {
                f.predict_into(x, &mut y);
                loss.value(&y, target)
            })
            .sum();
        total / self.len() as f64
    }
}

/// Sample indices sharing one input point.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub point: Vec<f64>,
    pub members: Vec<usize>,
}

/// Budget schedule `L_T = L0 · max(ln T, 1)^{1/(m_eff + 2)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub l0: f64,
    pub m_eff: usize,
}

impl Schedule {
    pub fn new(l0: f64, m_eff: usize) -> Result<Self> {
        if !(l0 > 0.0) || !l0.is_finite() {
            return Err(FitError::InvalidBudget(l0));
        }
        Ok(Self { l0, m_eff })
    }

    /// `m_eff = n · d` for contexts of `d` observations in `[0,1]^n`.
    pub fn for_contexts(l0: f64, n: usize, d: usize) -> Result<Self> {
        Self::new(l0, n * d)
    }

    pub fn value(&self, t: f64) -> f64 {
        let log = libm::log(t.max(1.0)).max(1.0);
        self.l0 * libm::pow(log, 1.0 / (self.m_eff as f64 + 2.0))
    }

    pub fn at(&self, t: usize) -> f64 {
        self.value(t as f64)
    }
}

/// A random `budget`-Lipschitz function on `[0,1]^dim` with values in
/// `[0,1]`: anchors are placed uniformly and each value is drawn uniformly
/// from the interval left open by the anchors before it.
pub fn random_lipschitz_fn<R: rand::Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    anchors: usize,
    budget: f64,
) -> Result<LipschitzFn> {
    check_budget(budget)?;
    let mut points: Vec<f64> = Vec::with_capacity(anchors * dim);
    let mut values: Vec<f64> = Vec::with_capacity(anchors);
    for i in 0..anchors.max(1) {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for j in 0..i {
            let r = budget * euclidean(&x, &points[j * dim..(j + 1) * dim]);
            lo = lo.max(values[j] - r);
            hi = hi.min(values[j] + r);
        }
        values.push(if hi > lo { lo + (hi - lo) * rng.gen::<f64>() } else { lo });
        points.extend_from_slice(&x);
    }
    LipschitzFn::from_anchors(dim, 1, budget, points, values)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub(crate) fn check_budget(budget: f64) -> Result<()> {
    if budget > 0.0 && budget.is_finite() {
        Ok(())
    } else {
        Err(FitError::InvalidBudget(budget))
    }
}

/// Largest observed ratio `‖f(x) − f(x′)‖ / ‖x − x′‖` over the given pairs;
/// a lower bound on the Lipschitz constant of `f`.
pub fn empirical_lipschitz<P, X>(f: &P, pairs: &[(X, X)]) -> Result<f64>
where
    P: Predictor + ?Sized,
    X: AsRef<[f64]>,
{
    if pairs.is_empty() {
        return Err(FitError::Dimension("no pairs supplied".into()));
    }
    let mut fa = alloc::vec![0.0; f.output_dim()];
    let mut fb = fa.clone();
    let mut best: f64 = 0.0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != b.len() {
            return Err(FitError::Dimension(format!("pair {i} mixes dimensions {} and {}", a.len(), b.len())));
        }
        let dx = euclidean(a, b);
        if dx == 0.0 {
            return Err(FitError::DegeneratePair(i));
        }
        f.predict_into(a, &mut fa);
        f.predict_into(b, &mut fb);
        best = best.max(euclidean(&fa, &fb) / dx);
    }
    Ok(best)
}
