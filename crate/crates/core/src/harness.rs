//! The sequential prediction game.
//!
//! At each round `t` the strategy sees the last `d` observations, commits to
//! `y_t ∈ [0,1]^n`, and only then is `x_t` revealed and `u(y_t, x_t)`
//! charged. The first `d` rounds have no full context and are not scored.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::lipschitz::{mcshane_fit, mlp_fit, FitError, LipschitzFn, MlpConfig, Samples, Schedule, SpectralMlp};
use crate::oracle::{LossFn, LossKind, OptimalRisk, OracleError};
use crate::predictor::Predictor;
use crate::processes::{MarkovProcess, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("trajectory of length {len} is too short for memory {memory}")]
    TooShort { len: usize, memory: usize },
    #[error("strategy predicted {value} at round {t}, outside [0,1]")]
    PredictionOutOfRange { t: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = HarnessError> = core::result::Result<T, E>;

/// A refit performed after revealing `x_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainEvent {
    pub t: usize,
    pub budget: f64,
    pub samples: usize,
}

/// An online forecaster. Rounds are one-based.
///
/// The loop calls, for every `t`: [`predict`](Self::predict) (scored rounds
/// only), then [`observe`](Self::observe) with `x_t`, then
/// [`after_reveal`](Self::after_reveal).
pub trait Strategy {
    fn name(&self) -> &str;

    /// Prediction for round `t` from `x_{t−d}..x_{t−1}` (flattened, oldest
    /// first).
    fn predict(&mut self, t: usize, context: &[f64], out: &mut [f64]);

    /// Reveals `x_t`.
    fn observe(&mut self, t: usize, x: &[f64]);

    /// Retrain hook, after `x_t` is known.
    fn after_reveal(&mut self, _t: usize) -> Result<()> {
        Ok(())
    }

    /// Lipschitz budget currently in use, if any.
    fn budget(&self) -> Option<f64> {
        None
    }

    fn retrains(&self) -> &[RetrainEvent] {
        &[]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub t: usize,
    /// Scored rounds up to and including `t`.
    pub scored: usize,
    pub avg_loss: f64,
    pub budget: Option<f64>,
    /// A retrain happened at exactly `t`.
    pub retrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub strategy: String,
    pub memory: usize,
    /// `losses[i]` is the loss of round `memory + 1 + i`.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub retrains: Vec<RetrainEvent>,
    pub final_average: f64,
    pub optimal: Option<f64>,
}

impl RunMetrics {
    /// Mean of the recorded losses of rounds `memory+1..=t`.
    pub fn average_to(&self, t: usize) -> f64 {
        let k = t.saturating_sub(self.memory).min(self.losses.len());
        self.losses[..k].iter().sum::<f64>() / k.max(1) as f64
    }
}

/// Powers of two in `[first, horizon]`, then `horizon`.
pub fn checkpoint_times(first: usize, horizon: usize) -> Vec<usize> {
    let mut out: Vec<usize> =
        (0..usize::BITS).map(|k| 1usize << k).take_while(|&t| t <= horizon).filter(|&t| t >= first).collect();
    if out.last() != Some(&horizon) && horizon >= first {
        out.push(horizon);
    }
    out
}

/// Plays the game over the whole trajectory.
pub fn run_online<S: Strategy + ?Sized>(
    trajectory: &Trajectory,
    strategy: &mut S,
    loss: &LossFn,
    memory: usize,
) -> Result<RunMetrics> {
    let horizon = trajectory.len();
    if horizon < memory + 1 {
        return Err(HarnessError::TooShort { len: horizon, memory });
    }
    let n = trajectory.dim();
    let checkpoints_at = checkpoint_times(memory + 1, horizon);
    let mut next_checkpoint = 0;
    let mut checkpoints = Vec::with_capacity(checkpoints_at.len());
    let mut losses = Vec::with_capacity(horizon - memory);
    let mut y = vec![0.0; n];
    let mut running = 0.0;
    let mut retrain_count = strategy.retrains().len();

    for t in 1..=horizon {
        let x = trajectory.observation(t - 1);
        let scored = t > memory;
        if scored {
            let context = trajectory.window(t - 1 - memory, memory);
            strategy.predict(t, context, &mut y);
            if let Some(&value) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(HarnessError::PredictionOutOfRange { t, value });
            }
            let l = loss.value(&y, x);
            running += l;
            losses.push(l);
        }
        strategy.observe(t, x);
        strategy.after_reveal(t)?;

        let retrained = strategy.retrains().len() > retrain_count;
        retrain_count = strategy.retrains().len();
        if checkpoints_at.get(next_checkpoint) == Some(&t) {
            let k = losses.len();
            checkpoints.push(Checkpoint {
                t,
                scored: k,
                avg_loss: running / k as f64,
                budget: strategy.budget(),
                retrained,
            });
            next_checkpoint += 1;
        }
    }
    let final_average = running / losses.len() as f64;
    Ok(RunMetrics {
        strategy: String::from(strategy.name()),
        memory,
        losses,
        checkpoints,
        retrains: strategy.retrains().to_vec(),
        final_average,
        optimal: None,
    })
}

/// Average loss minus `L*` at every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCurve {
    pub points: Vec<(usize, f64)>,
    pub final_gap: f64,
}

pub fn compare_to_optimal(metrics: &RunMetrics, optimal: &OptimalRisk) -> GapCurve {
    gap_curve(metrics, optimal.value)
}

pub fn gap_curve(metrics: &RunMetrics, optimal: f64) -> GapCurve {
    GapCurve {
        points: metrics.checkpoints.iter().map(|c| (c.t, c.avg_loss - optimal)).collect(),
        final_gap: metrics.final_average - optimal,
    }
}

/// When a refitting strategy retrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainPolicy {
    /// At `t = 2, 4, 8, …`
    Doubling,
    /// At every multiple of the period.
    Every(usize),
}

impl RetrainPolicy {
    pub fn fires_at(&self, t: usize) -> bool {
        match *self {
            RetrainPolicy::Doubling => t >= 2 && t.is_power_of_two(),
            RetrainPolicy::Every(p) => p > 0 && t % p == 0,
        }
    }
}

/// How the Lipschitz budget evolves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    Scheduled(Schedule),
    Frozen(f64),
}

impl BudgetRule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            BudgetRule::Scheduled(s) => s.at(t),
            BudgetRule::Frozen(l) => *l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitter {
    Envelope,
    Mlp(MlpConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Envelope(LipschitzFn),
    Mlp(SpectralMlp),
}

impl Predictor for Fitted {
    fn output_dim(&self) -> usize {
        match self {
            Fitted::Envelope(f) => f.output_dim(),
            Fitted::Mlp(f) => f.output_dim(),
        }
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Fitted::Envelope(f) => f.predict_into(x, out),
            Fitted::Mlp(f) => f.predict_into(x, out),
        }
    }
}

/// Refits a Lipschitz-constrained empirical risk minimizer on every past
/// (context, next observation) pair at each retrain time, with the budget
/// given by the rule at that time. Predicts the centre of the cube until
/// the first fit.
#[derive(Debug, Clone)]
pub struct LipschitzErm {
    name: String,
    fitter: Fitter,
    rule: BudgetRule,
    policy: RetrainPolicy,
    loss: LossFn,
    memory: usize,
    dim: usize,
    history: Vec<f64>,
    samples: Samples,
    current: Option<Fitted>,
    budget: Option<f64>,
    retrains: Vec<RetrainEvent>,
}

pub fn lipschitz_erm_strategy(
    fitter: Fitter,
    rule: BudgetRule,
    policy: RetrainPolicy,
    loss: LossFn,
    memory: usize,
    dim: usize,
) -> LipschitzErm {
    let name = match (fitter, rule) {
        (Fitter::Envelope, BudgetRule::Scheduled(_)) => "erm-envelope",
        (Fitter::Envelope, BudgetRule::Frozen(_)) => "erm-envelope-frozen",
        (Fitter::Mlp(_), BudgetRule::Scheduled(_)) => "erm-mlp",
        (Fitter::Mlp(_), BudgetRule::Frozen(_)) => "erm-mlp-frozen",
    };
    LipschitzErm {
        name: name.into(),
        fitter,
        rule,
        policy,
        loss,
        memory,
        dim,
        history: Vec::new(),
        samples: Samples::new(dim * memory, dim),
        current: None,
        budget: None,
        retrains: Vec::new(),
    }
}

impl LipschitzErm {
    pub fn fitted(&self) -> Option<&Fitted> {
        self.current.as_ref()
    }
}

impl Strategy for LipschitzErm {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&mut self, _t: usize, context: &[f64], out: &mut [f64]) {
        match &self.current {
            Some(f) => f.predict_into(context, out),
            None => out.iter_mut().for_each(|o| *o = 0.5),
        }
    }

    fn observe(&mut self, t: usize, x: &[f64]) {
        self.history.extend_from_slice(x);
        if t > self.memory {
            let start = (t - 1 - self.memory) * self.dim;
            let context = &self.history[start..start + self.memory * self.dim];
            self.samples.push(context, x);
        }
    }

    fn after_reveal(&mut self, t: usize) -> Result<()> {
        if !self.policy.fires_at(t) || self.samples.is_empty() {
            return Ok(());
        }
        let budget = self.rule.at(t);
        let fitted = match self.fitter {
            Fitter::Envelope => Fitted::Envelope(mcshane_fit(&self.samples, budget, &self.loss)?),
            Fitter::Mlp(cfg) => {
                let cfg = MlpConfig { budget, seed: cfg.seed.wrapping_add(self.retrains.len() as u64), ..cfg };
                Fitted::Mlp(mlp_fit(&self.samples, &cfg, &self.loss)?)
            }
        };
        self.current = Some(fitted);
        self.budget = Some(budget);
        self.retrains.push(RetrainEvent { t, budget, samples: self.samples.len() });
        Ok(())
    }

    fn budget(&self) -> Option<f64> {
        self.budget
    }

    fn retrains(&self) -> &[RetrainEvent] {
        &self.retrains
    }
}

/// Always plays the same action.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantStrategy {
    pub action: Vec<f64>,
}

impl Strategy for ConstantStrategy {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict(&mut self, _t: usize, _context: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.action);
    }

    fn observe(&mut self, _t: usize, _x: &[f64]) {}
}

/// Plays the exact optimal action for the current context; needs the law
/// of the source.
#[derive(Debug, Clone)]
pub struct OracleStrategy {
    process: MarkovProcess,
    table: OptimalRisk,
}

impl OracleStrategy {
    pub fn new(process: MarkovProcess, loss: &LossFn, memory: usize) -> Result<Self> {
        let table = crate::oracle::optimal_risk(&process, loss, memory)?;
        Ok(Self { process, table })
    }

    pub fn table(&self) -> &OptimalRisk {
        &self.table
    }
}

impl Strategy for OracleStrategy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&mut self, _t: usize, context: &[f64], out: &mut [f64]) {
        let n = self.process.dim();
        let states: Vec<usize> = context.chunks_exact(n).map(|p| self.process.nearest_state(p)).collect();
        let k = self.process.states();
        let index = states.iter().fold(0, |acc, &s| acc * k + s);
        out.copy_from_slice(&self.table.per_context[index].action);
    }

    fn observe(&mut self, _t: usize, _x: &[f64]) {}
}

#[derive(Debug, Clone)]
enum CellStats {
    Sums { count: usize, sums: Vec<f64> },
    Sorted(Vec<Vec<f64>>),
}

impl CellStats {
    fn new(loss: &LossFn, dim: usize) -> Self {
        match loss.kind() {
            LossKind::Squared => CellStats::Sums { count: 0, sums: vec![0.0; dim] },
            _ => CellStats::Sorted(vec![Vec::new(); dim]),
        }
    }

    fn insert(&mut self, x: &[f64]) {
        match self {
            CellStats::Sums { count, sums } => {
                *count += 1;
                sums.iter_mut().zip(x).for_each(|(s, v)| *s += v);
            }
            CellStats::Sorted(cols) => {
                for (col, &v) in cols.iter_mut().zip(x) {
                    let at = col.partition_point(|&c| c <= v);
                    col.insert(at, v);
                }
            }
        }
    }

    /// Empirical loss minimizer of the targets seen in this cell.
    fn minimizer(&self, level: f64, out: &mut [f64]) {
        match self {
            CellStats::Sums { count, sums } => {
                for (o, s) in out.iter_mut().zip(sums) {
                    *o = (s / *count as f64).clamp(0.0, 1.0);
                }
            }
            CellStats::Sorted(cols) => {
                for (o, col) in out.iter_mut().zip(cols) {
                    let k = libm::ceil(level * col.len() as f64 - 1e-12) as usize;
                    *o = col[k.clamp(1, col.len()) - 1];
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct HistogramExpert {
    resolution: usize,
    cells: BTreeMap<Vec<usize>, CellStats>,
}

impl HistogramExpert {
    fn cell(&self, context: &[f64]) -> Vec<usize> {
        let r = self.resolution;
        context.iter().map(|&c| ((c * r as f64) as usize).min(r - 1)).collect()
    }
}

/// Histogram experts at several grid resolutions over the context cube,
/// each predicting the empirical loss minimizer of its cell, mixed by
/// exponential weights on their cumulative losses.
#[derive(Debug, Clone)]
pub struct HistogramExperts {
    loss: LossFn,
    level: f64,
    learning_rate: f64,
    dim: usize,
    experts: Vec<HistogramExpert>,
    log_weights: Vec<f64>,
    pending: Option<(Vec<Vec<usize>>, Vec<Vec<f64>>)>,
}

pub fn histogram_expert_strategy(
    resolutions: &[usize],
    learning_rate: f64,
    loss: LossFn,
    dim: usize,
) -> Result<HistogramExperts> {
    if resolutions.is_empty() || resolutions.contains(&0) {
        return Err(HarnessError::Dimension("resolutions must be a non-empty list of positive integers".into()));
    }
    let level = match loss.kind() {
        LossKind::Pinball(t) => t,
        _ => 0.5,
    };
    Ok(HistogramExperts {
        loss,
        level,
        learning_rate,
        dim,
        experts: resolutions.iter().map(|&r| HistogramExpert { resolution: r, cells: BTreeMap::new() }).collect(),
        log_weights: vec![0.0; resolutions.len()],
        pending: None,
    })
}

impl HistogramExperts {
    /// Current mixture weights.
    pub fn weights(&self) -> Vec<f64> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.log_weights.iter().map(|w| libm::exp(w - max)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

impl Strategy for HistogramExperts {
    fn name(&self) -> &str {
        "histogram"
    }

    fn predict(&mut self, _t: usize, context: &[f64], out: &mut [f64]) {
        let weights = self.weights();
        let mut cells = Vec::with_capacity(self.experts.len());
        let mut preds = Vec::with_capacity(self.experts.len());
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, w) in self.experts.iter().zip(&weights) {
            let cell = e.cell(context);
            let mut y = vec![0.5; self.dim];
            if let Some(stats) = e.cells.get(&cell) {
                stats.minimizer(self.level, &mut y);
            }
            for (o, v) in out.iter_mut().zip(&y) {
                *o += w * v;
            }
            cells.push(cell);
            preds.push(y);
        }
        out.iter_mut().for_each(|o| *o = o.clamp(0.0, 1.0));
        self.pending = Some((cells, preds));
    }

    fn observe(&mut self, _t: usize, x: &[f64]) {
        let Some((cells, preds)) = self.pending.take() else {
            return;
        };
        for (lw, y) in self.log_weights.iter_mut().zip(&preds) {
            *lw -= self.learning_rate * self.loss.value(y, x);
        }
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter_mut().for_each(|w| *w -= max);
        for (e, cell) in self.experts.iter_mut().zip(cells) {
            let (loss, dim) = (&self.loss, self.dim);
            e.cells.entry(cell).or_insert_with(|| CellStats::new(loss, dim)).insert(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints() {
        assert_eq!(checkpoint_times(2, 10), vec![2, 4, 8, 10]);
        assert_eq!(checkpoint_times(1, 8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoint_times(3, 3), vec![3]);
    }

    #[test]
    fn policies() {
        let d: Vec<usize> = (1..=20).filter(|&t| RetrainPolicy::Doubling.fires_at(t)).collect();
        assert_eq!(d, vec![2, 4, 8, 16]);
        let e: Vec<usize> = (1..=20).filter(|&t| RetrainPolicy::Every(7).fires_at(t)).collect();
        assert_eq!(e, vec![7, 14]);
    }

    #[test]
    fn oracle_on_cycle_is_perfect() {
        let p = MarkovProcess::two_cycle();
        let t = p.sample_trajectory(200, 1).unwrap();
        let mut s = OracleStrategy::new(p, &LossFn::squared(), 1).unwrap();
        let m = run_online(&t, &mut s, &LossFn::squared(), 1).unwrap();
        assert_eq!(m.final_average, 0.0);
        assert_eq!(m.losses.len(), 199);
    }

    #[test]
    fn out_of_range_prediction() {
        let p = MarkovProcess::two_cycle();
        let t = p.sample_trajectory(10, 1).unwrap();
        let mut s = ConstantStrategy { action: vec![1.5] };
        let err = run_online(&t, &mut s, &LossFn::squared(), 1).unwrap_err();
        assert_eq!(err, HarnessError::PredictionOutOfRange { t: 2, value: 1.5 });
        let mut s = ConstantStrategy { action: vec![0.5] };
        assert!(matches!(run_online(&t, &mut s, &LossFn::squared(), 10), Err(HarnessError::TooShort { .. })));
    }

    #[test]
    fn doubling_retrain_log() {
        let p = MarkovProcess::two_cycle();
        let t = p.sample_trajectory(100, 3).unwrap();
        let sched = Schedule::new(1.0, 1).unwrap();
        let mut s = lipschitz_erm_strategy(
            Fitter::Envelope,
            BudgetRule::Scheduled(sched),
            RetrainPolicy::Doubling,
            LossFn::squared(),
            1,
            1,
        );
        let m = run_online(&t, &mut s, &LossFn::squared(), 1).unwrap();
        let times: Vec<usize> = m.retrains.iter().map(|r| r.t).collect();
        assert_eq!(times, vec![2, 4, 8, 16, 32, 64]);
        assert!(m.checkpoints.iter().filter(|c| c.t < 100).all(|c| c.retrained));
        assert!(!m.checkpoints.last().unwrap().retrained);
        // after the second retrain both contexts have been seen
        assert!(m.losses[3..].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn histogram_weights_stay_normalized() {
        let p = MarkovProcess::two_state(0.8, 0.7).unwrap();
        let t = p.sample_trajectory(500, 9).unwrap();
        let mut s = histogram_expert_strategy(&[1, 2, 4], 2.0, LossFn::absolute(), 1).unwrap();
        for i in 1..=t.len() {
            if i > 1 {
                let mut y = [0.0];
                s.predict(i, t.observation(i - 2), &mut y);
                assert!((0.0..=1.0).contains(&y[0]));
            }
            s.observe(i, t.observation(i - 1));
            assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(histogram_expert_strategy(&[], 1.0, LossFn::squared(), 1).is_err());
    }
}
