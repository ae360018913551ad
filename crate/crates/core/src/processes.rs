//! Stationary ergodic sources with a fully known law.
//!
//! [`MarkovProcess`] is a finite-state chain of order `d` whose states are
//! embedded into `[0,1]^n`. Its context chain (the last `d` states, oldest
//! first) is an ordinary first-order chain on `K^d` contexts, which gives
//! exact stationary laws and exact absolute-regularity coefficients.
//! [`ArProcess`] is a clamped autoregression used only as a continuous-state
//! smoke source.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Residual target for the stationary law.
pub const STATIONARY_TOLERANCE: f64 = 1e-12;

const LAZY_ITERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("kernel row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("kernel row {row} has invalid entry {value} in column {col}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("context chain is not ergodic: no power up to {cap} is entrywise positive")]
    NotErgodic { cap: u64 },
    #[error("stationary law did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid embedding: {0}")]
    Embedding(String),
    #[error("invalid autoregressive source: {0}")]
    InvalidAr(String),
    #[error("{0} is only available for finite Markov sources")]
    Unsupported(&'static str),
}

pub type Result<T, E = ProcessError> = core::result::Result<T, E>;

/// A point of the observation space `[0,1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(ProcessError::Embedding(format!("coordinate {bad} outside [0,1]")));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Which process produced a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceDescriptor {
    Markov {
        states: usize,
        order: usize,
    },
    Ar {
        order: usize,
    },
    /// Loaded from a file or built by hand.
    External,
}

/// A sampled path `x_1..x_T`, stored flat (`T * dim` values).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub source: SourceDescriptor,
    dim: usize,
    values: Vec<f64>,
    states: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn from_values(dim: usize, values: Vec<f64>, seed: u64, source: SourceDescriptor) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(ProcessError::Dimension(format!(
                "{} values do not split into observations of dimension {dim}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(ProcessError::Embedding(format!("coordinate {bad} outside [0,1]")));
        }
        Ok(Self { seed, source, dim, values, states: None })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Observation `t`, zero-based.
    pub fn observation(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// `len` consecutive observations starting at zero-based `start`,
    /// flattened oldest first.
    pub fn window(&self, start: usize, len: usize) -> &[f64] {
        &self.values[start * self.dim..(start + len) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Hidden state indices, when the source is a Markov chain.
    pub fn states(&self) -> Option<&[usize]> {
        self.states.as_deref()
    }
}

/// Finite-state Markov source of order `d` with states embedded in `[0,1]^n`.
#[derive(Debug, Clone)]
pub struct MarkovProcess {
    states: usize,
    order: usize,
    dim: usize,
    kernel: Matrix,
    embedding: Vec<Observation>,
    ergodic: bool,
    stationary: Option<Vec<f64>>,
    row_samplers: Vec<WeightedIndex<f64>>,
    start_sampler: Option<WeightedIndex<f64>>,
}

/// Construction options for [`MarkovProcess`].
#[derive(Debug, Clone)]
pub struct MarkovBuilder {
    kernel: Matrix,
    embedding: Vec<Vec<f64>>,
    order: usize,
    require_ergodic: bool,
    exponent_cap: Option<u64>,
}

impl MarkovBuilder {
    /// Reject kernels whose context chain is not primitive (default `true`).
    pub fn require_ergodic(mut self, yes: bool) -> Self {
        self.require_ergodic = yes;
        self
    }

    /// Largest matrix power tried by the primitivity check
    /// (default `K^d * K + 1`).
    pub fn exponent_cap(mut self, cap: u64) -> Self {
        self.exponent_cap = Some(cap);
        self
    }

    pub fn build(self) -> Result<MarkovProcess> {
        let Self { kernel, embedding, order, require_ergodic, exponent_cap } = self;
        let states = embedding.len();
        if states == 0 {
            return Err(ProcessError::Dimension("at least one state is required".into()));
        }
        if order == 0 {
            return Err(ProcessError::Dimension("order must be at least 1".into()));
        }
        let contexts = checked_contexts(states, order)?;
        if kernel.rows() != contexts || kernel.cols() != states {
            return Err(ProcessError::Dimension(format!(
                "kernel is {}x{}, expected {contexts}x{states} for K={states}, d={order}",
                kernel.rows(),
                kernel.cols()
            )));
        }
        for row in 0..contexts {
            let r = kernel.row(row);
            if let Some((col, &value)) = r.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(ProcessError::NegativeEntry { row, col, value });
            }
            let sum: f64 = r.iter().sum();
            if libm::fabs(sum - 1.0) > ROW_SUM_TOLERANCE {
                return Err(ProcessError::RowSum { row, sum });
            }
        }

        let dim = embedding[0].len();
        if dim == 0 {
            return Err(ProcessError::Embedding("observation dimension must be positive".into()));
        }
        let mut points = Vec::with_capacity(states);
        for (i, e) in embedding.into_iter().enumerate() {
            if e.len() != dim {
                return Err(ProcessError::Embedding(format!("state {i} has dimension {}, expected {dim}", e.len())));
            }
            if points.iter().any(|p: &Observation| p.coords() == e.as_slice()) {
                return Err(ProcessError::Embedding(format!("state {i} duplicates an earlier embedding point")));
            }
            points.push(Observation::new(e)?);
        }

        let cap = exponent_cap.unwrap_or((contexts * states) as u64 + 1);
        let ergodic = is_primitive(&kernel, states, cap);
        if require_ergodic && !ergodic {
            return Err(ProcessError::NotErgodic { cap });
        }

        let row_samplers = (0..contexts)
            .map(|c| WeightedIndex::new(kernel.row(c).iter().copied()).expect("validated stochastic row"))
            .collect();
        let mut process = MarkovProcess {
            states,
            order,
            dim,
            kernel,
            embedding: points,
            ergodic,
            stationary: None,
            row_samplers,
            start_sampler: None,
        };
        match solve_stationary(&process.context_matrix()) {
            Ok(pi) => {
                process.start_sampler = WeightedIndex::new(pi.iter().copied()).ok();
                process.stationary = Some(pi);
            }
            Err(e) if ergodic => return Err(e),
            Err(_) => {}
        }
        Ok(process)
    }
}

fn checked_contexts(states: usize, order: usize) -> Result<usize> {
    u32::try_from(order)
        .ok()
        .and_then(|o| states.checked_pow(o))
        .ok_or_else(|| ProcessError::Dimension(format!("K^d overflows for K={states}, d={order}")))
}

/// Validates a kernel and builds an ergodic process (see [`MarkovBuilder`]).
pub fn build_markov(kernel: Matrix, embedding: Vec<Vec<f64>>, order: usize, dim: usize) -> Result<MarkovProcess> {
    if embedding.iter().any(|e| e.len() != dim) {
        return Err(ProcessError::Embedding(format!("embedding points must have dimension {dim}")));
    }
    MarkovProcess::builder(kernel, embedding, order).build()
}

impl MarkovProcess {
    pub fn builder(kernel: Matrix, embedding: Vec<Vec<f64>>, order: usize) -> MarkovBuilder {
        MarkovBuilder { kernel, embedding, order, require_ergodic: true, exponent_cap: None }
    }

    /// Two states embedded at 0.0 and 1.0, staying put with the given
    /// probabilities.
    pub fn two_state(stay0: f64, stay1: f64) -> Result<Self> {
        Self::builder(Matrix::from_rows(&[[stay0, 1.0 - stay0], [1.0 - stay1, stay1]]), vec![vec![0.0], vec![1.0]], 1)
            .build()
    }

    /// An i.i.d. source: every kernel row equals `probs`.
    pub fn iid(probs: &[f64], embedding: Vec<Vec<f64>>) -> Result<Self> {
        let rows: Vec<&[f64]> = (0..probs.len()).map(|_| probs).collect();
        Self::builder(Matrix::from_rows(&rows), embedding, 1).build()
    }

    /// The deterministic alternation 0, 1, 0, 1, ... on {0.0, 1.0}.
    /// Periodic, hence built without the ergodicity requirement.
    pub fn two_cycle() -> Self {
        Self::builder(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]), vec![vec![0.0], vec![1.0]], 1)
            .require_ergodic(false)
            .build()
            .expect("two-cycle kernel is valid")
    }

    /// A single state at `value`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::builder(Matrix::from_rows(&[[1.0]]), vec![vec![value]], 1).build()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Memory bound `d`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Observation dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of contexts, `K^d`.
    pub fn contexts(&self) -> usize {
        self.kernel.rows()
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn embedding(&self) -> &[Observation] {
        &self.embedding
    }

    pub fn embed(&self, state: usize) -> &[f64] {
        self.embedding[state].coords()
    }

    /// Whether the context chain passed the primitivity check.
    pub fn is_ergodic(&self) -> bool {
        self.ergodic
    }

    /// Index of a context tuple (oldest state first).
    pub fn context_index(&self, context: &[usize]) -> Option<usize> {
        if context.len() != self.order || context.iter().any(|&s| s >= self.states) {
            return None;
        }
        Some(context.iter().fold(0, |acc, &s| acc * self.states + s))
    }

    /// Inverse of [`context_index`](Self::context_index).
    pub fn decode_context(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.order];
        for slot in out.iter_mut().rev() {
            *slot = index % self.states;
            index /= self.states;
        }
        out
    }

    /// Context reached from `context` after emitting `next`.
    pub fn advance(&self, context: usize, next: usize) -> usize {
        (context * self.states + next) % self.contexts()
    }

    /// State nearest to `point` in Euclidean distance.
    pub fn nearest_state(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (s, e) in self.embedding.iter().enumerate() {
            let d: f64 = e.coords().iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (s, d);
            }
        }
        best.0
    }

    /// Transition matrix of the context chain (`K^d × K^d`).
    pub fn context_matrix(&self) -> Matrix {
        let n = self.contexts();
        let mut m = Matrix::zeros(n, n);
        for c in 0..n {
            for s in 0..self.states {
                m[(c, self.advance(c, s))] += self.kernel[(c, s)];
            }
        }
        m
    }

    /// Stationary law of the context chain.
    pub fn stationary_distribution(&self) -> Result<&[f64]> {
        self.stationary.as_deref().ok_or(ProcessError::NoConvergence { residual: f64::NAN })
    }

    /// Stationary marginal law of a single observation's state.
    pub fn state_marginal(&self) -> Result<Vec<f64>> {
        let pi = self.stationary_distribution()?;
        let mut out = vec![0.0; self.states];
        for (c, p) in pi.iter().enumerate() {
            out[c % self.states] += p;
        }
        Ok(out)
    }

    /// Exact absolute-regularity coefficient at lag `m`:
    /// `Σ_c π(c) · TV(P^m(c,·), π)` on the context chain.
    pub fn beta_coefficient(&self, m: u64) -> Result<f64> {
        let pi = self.stationary_distribution()?;
        let pm = self.context_matrix().pow(m);
        let beta = pi
            .iter()
            .enumerate()
            .map(|(c, w)| w * 0.5 * pm.row(c).iter().zip(pi).map(|(a, b)| libm::fabs(a - b)).sum::<f64>())
            .sum::<f64>();
        Ok(beta.clamp(0.0, 1.0))
    }

    /// Samples `len` observations started from the stationary context law.
    pub fn sample_trajectory(&self, len: usize, seed: u64) -> Result<Trajectory> {
        self.sample_with(len, seed, 0)
    }

    /// Like [`sample_trajectory`](Self::sample_trajectory) on an explicit
    /// ChaCha stream; used for independent block resampling.
    pub fn sample_with(&self, len: usize, seed: u64, stream: u64) -> Result<Trajectory> {
        let start = self.start_sampler.as_ref().ok_or(ProcessError::NoConvergence { residual: f64::NAN })?;
        let mut rng = rng::stream(seed, stream);
        let context = start.sample(&mut rng);
        Ok(self.run_chain(context, len, seed, &mut rng))
    }

    /// Samples from an explicit initial context (oldest state first). The
    /// context states are the first `d` observations.
    pub fn sample_from(&self, context: &[usize], len: usize, seed: u64) -> Result<Trajectory> {
        let idx = self
            .context_index(context)
            .ok_or_else(|| ProcessError::Dimension(format!("invalid start context {context:?}")))?;
        let mut rng = rng::seeded(seed);
        Ok(self.run_chain(idx, len, seed, &mut rng))
    }

    fn run_chain(&self, mut context: usize, len: usize, seed: u64, rng: &mut rng::Rng) -> Trajectory {
        let mut states: Vec<usize> = self.decode_context(context);
        states.truncate(len);
        while states.len() < len {
            let next = self.row_samplers[context].sample(rng);
            states.push(next);
            context = self.advance(context, next);
        }
        let mut values = Vec::with_capacity(len * self.dim);
        for &s in &states {
            values.extend_from_slice(self.embed(s));
        }
        Trajectory {
            seed,
            source: SourceDescriptor::Markov { states: self.states, order: self.order },
            dim: self.dim,
            values,
            states: Some(states),
        }
    }
}

/// Whether some power `k ≤ cap` of the context chain is entrywise positive.
fn is_primitive(kernel: &Matrix, states: usize, cap: u64) -> bool {
    let n = kernel.rows();
    let succ: Vec<Vec<usize>> =
        (0..n).map(|c| (0..states).filter(|&s| kernel[(c, s)] > 0.0).map(|s| (c * states + s) % n).collect()).collect();
    // reach[c][c'] = c' reachable from c in exactly k steps
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|c| {
            let mut row = vec![false; n];
            succ[c].iter().for_each(|&t| row[t] = true);
            row
        })
        .collect();
    for _ in 1..=cap {
        if reach.iter().all(|row| row.iter().all(|&b| b)) {
            return true;
        }
        reach = reach
            .iter()
            .map(|row| {
                let mut next = vec![false; n];
                for (c, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                    succ[c].iter().for_each(|&t| next[t] = true);
                }
                next
            })
            .collect();
    }
    false
}

fn stationary_residual(p: &Matrix, pi: &[f64]) -> f64 {
    let pp = p.tr_mul_vec(pi);
    pp.iter().zip(pi).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max)
}

/// Solves `πP = π, Σπ = 1` directly; falls back to power iteration on the
/// lazy chain `(P + I)/2` when the system is singular (reducible chains).
fn solve_stationary(p: &Matrix) -> Result<Vec<f64>> {
    let n = p.rows();
    if let Some(mut pi) = solve_linear_stationary(p) {
        for _ in 0..3 {
            if stationary_residual(p, &pi) <= STATIONARY_TOLERANCE {
                break;
            }
            let next = p.tr_mul_vec(&pi);
            pi = normalize(next);
        }
        if stationary_residual(p, &pi) <= STATIONARY_TOLERANCE {
            return Ok(pi);
        }
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..LAZY_ITERATION_CAP {
        let step = p.tr_mul_vec(&pi);
        pi = normalize(pi.iter().zip(&step).map(|(a, b)| 0.5 * (a + b)).collect());
        residual = stationary_residual(p, &pi);
        if residual <= STATIONARY_TOLERANCE {
            return Ok(pi);
        }
    }
    Err(ProcessError::NoConvergence { residual })
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Gaussian elimination with partial pivoting on `(Pᵀ − I)` with the last
/// equation replaced by `Σπ = 1`. `None` when singular.
fn solve_linear_stationary(p: &Matrix) -> Option<Vec<f64>> {
    let n = p.rows();
    let mut a = p.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    let mut b = vec![0.0; n];
    a.row_mut(n - 1).iter_mut().for_each(|v| *v = 1.0);
    b[n - 1] = 1.0;

    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| libm::fabs(a[(i, col)]).total_cmp(&libm::fabs(a[(j, col)])))?;
        if libm::fabs(a[(pivot, col)]) < 1e-13 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[(row, col)] / a[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[(row, j)] -= f * a[(col, j)];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[(i, j)] * x[j]).sum();
        x[i] = (b[i] - s) / a[(i, i)];
    }
    if x.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return None;
    }
    Some(normalize(x))
}

/// Mean-reverting autoregression clamped into `[0,1]`:
/// `x_t = clamp(mean + Σ_i a_i (x_{t−i} − mean) + U(−w, w))`.
///
/// The first `d` outputs are the initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct ArProcess {
    coefficients: Vec<f64>,
    noise: f64,
    mean: f64,
    init: Vec<f64>,
}

impl ArProcess {
    pub fn new(coefficients: Vec<f64>, noise: f64, mean: f64, init: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(ProcessError::InvalidAr("order must be at least 1".into()));
        }
        let l1: f64 = coefficients.iter().map(|a| libm::fabs(*a)).sum();
        if !(l1 < 1.0) {
            return Err(ProcessError::InvalidAr(format!("coefficient l1-norm {l1} is not below 1")));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(ProcessError::InvalidAr(format!("noise half-width {noise} must be finite and non-negative")));
        }
        if !(0.0..=1.0).contains(&mean) {
            return Err(ProcessError::InvalidAr(format!("mean {mean} outside [0,1]")));
        }
        if init.len() != coefficients.len() || init.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ProcessError::InvalidAr(format!(
                "need {} initial values in [0,1], got {:?}",
                coefficients.len(),
                init
            )));
        }
        Ok(Self { coefficients, noise, mean, init })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn sample(&self, len: usize, seed: u64) -> Trajectory {
        let mut rng = rng::seeded(seed);
        let mut values: Vec<f64> = self.init.iter().copied().take(len).collect();
        while values.len() < len {
            let t = values.len();
            let mut x = self.mean;
            for (i, a) in self.coefficients.iter().enumerate() {
                x += a * (values[t - 1 - i] - self.mean);
            }
            if self.noise > 0.0 {
                x += rng.gen_range(-self.noise..=self.noise);
            }
            values.push(x.clamp(0.0, 1.0));
        }
        Trajectory { seed, source: SourceDescriptor::Ar { order: self.order() }, dim: 1, values, states: None }
    }
}

/// Either kind of source.
#[derive(Debug, Clone)]
pub enum Process {
    Markov(MarkovProcess),
    Ar(ArProcess),
}

impl Process {
    pub fn dim(&self) -> usize {
        match self {
            Process::Markov(p) => p.dim(),
            Process::Ar(_) => 1,
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Process::Markov(p) => p.order(),
            Process::Ar(p) => p.order(),
        }
    }

    pub fn sample(&self, len: usize, seed: u64) -> Result<Trajectory> {
        match self {
            Process::Markov(p) => p.sample_trajectory(len, seed),
            Process::Ar(p) => Ok(p.sample(len, seed)),
        }
    }

    pub fn as_markov(&self) -> Result<&MarkovProcess> {
        match self {
            Process::Markov(p) => Ok(p),
            Process::Ar(_) => Err(ProcessError::Unsupported("this operation")),
        }
    }

    pub fn beta_coefficient(&self, m: u64) -> Result<f64> {
        match self {
            Process::Markov(p) => p.beta_coefficient(m),
            Process::Ar(_) => Err(ProcessError::Unsupported("beta_coefficient")),
        }
    }
}

impl From<MarkovProcess> for Process {
    fn from(p: MarkovProcess) -> Self {
        Process::Markov(p)
    }
}

impl From<ArProcess> for Process {
    fn from(p: ArProcess) -> Self {
        Process::Ar(p)
    }
}
