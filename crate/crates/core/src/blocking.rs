//! Independent-block analysis of dependent samples.
//!
//! A path of length `T` is cut into `2μ` consecutive blocks of length `a`,
//! alternating `H_1, T_1, H_2, T_2, …`. Replacing the `H` blocks with
//! independent copies `Ψ_1..Ψ_μ` of the same law costs at most `μ·β_a` in
//! total variation, which is how uniform deviation bounds for i.i.d. data
//! carry over to mixing processes. This module builds the partitions and
//! copies, measures uniform deviations over finite predictor families with
//! exact expectations, and evaluates the concentration bound for Lipschitz
//! classes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use thiserror::Error;

use crate::oracle::{expected_predictor_loss, LossFn, OracleError};
use crate::predictor::Predictor;
use crate::processes::{MarkovProcess, Process, ProcessError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("horizon {0} is too short for a block partition")]
    TooShort(usize),
    #[error("2·{mu}·{a} blocks exceed the horizon {horizon}")]
    Oversized { horizon: usize, mu: usize, a: usize },
    #[error("the function family is empty")]
    EmptyFamily,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = BlockError> = core::result::Result<T, E>;

/// `μ = ⌈√(T/2)⌉`, `a = ⌊T/(2μ)⌋`.
pub fn default_block_counts(horizon: usize) -> Result<(usize, usize)> {
    if horizon < 2 {
        return Err(BlockError::TooShort(horizon));
    }
    let mu = libm::ceil(libm::sqrt(horizon as f64 / 2.0)) as usize;
    let a = horizon / (2 * mu);
    if a == 0 {
        return Err(BlockError::TooShort(horizon));
    }
    Ok((mu, a))
}

/// Alternating blocks over one-based indices `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub horizon: usize,
    pub mu: usize,
    pub a: usize,
    /// `H_j = {2(j−1)a + 1, …, (2j−1)a}`
    pub h_blocks: Vec<RangeInclusive<usize>>,
    /// `T_j = {(2j−1)a + 1, …, 2ja}`
    pub t_blocks: Vec<RangeInclusive<usize>>,
    /// Indices after the last block; dropped from the analysis.
    pub remainder: Option<RangeInclusive<usize>>,
}

impl BlockPartition {
    pub fn remainder_len(&self) -> usize {
        self.remainder.as_ref().map_or(0, |r| r.clone().count())
    }

    /// Blocks in index order: `H_1, T_1, H_2, …`, tagged `true` for `H`.
    pub fn blocks_in_order(&self) -> impl Iterator<Item = (bool, usize, &RangeInclusive<usize>)> {
        self.h_blocks
            .iter()
            .zip(&self.t_blocks)
            .enumerate()
            .flat_map(|(j, (h, t))| [(true, j + 1, h), (false, j + 1, t)])
    }
}

pub fn block_partition(horizon: usize, mu: usize, a: usize) -> Result<BlockPartition> {
    if mu == 0 || a == 0 {
        return Err(BlockError::InvalidArgument(format!("mu = {mu} and a = {a} must be positive")));
    }
    let used = 2 * mu * a;
    if used > horizon {
        return Err(BlockError::Oversized { horizon, mu, a });
    }
    let h_blocks = (1..=mu).map(|j| (2 * (j - 1) * a + 1)..=((2 * j - 1) * a)).collect();
    let t_blocks = (1..=mu).map(|j| ((2 * j - 1) * a + 1)..=(2 * j * a)).collect();
    let remainder = (used < horizon).then(|| (used + 1)..=horizon);
    Ok(BlockPartition { horizon, mu, a, h_blocks, t_blocks, remainder })
}

/// Independent copies `Ψ_1..Ψ_μ`, each a stationary run of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentBlocks {
    pub seed: u64,
    pub blocks: Vec<Trajectory>,
}

/// `count` independent stationary runs of length `len`; block `j` uses
/// ChaCha stream `first_stream + j`.
pub fn resample_blocks(
    process: &MarkovProcess,
    count: usize,
    len: usize,
    seed: u64,
    first_stream: u64,
) -> Result<IndependentBlocks> {
    let blocks =
        (0..count).map(|j| process.sample_with(len, seed, first_stream + j as u64)).collect::<Result<_, _>>()?;
    Ok(IndependentBlocks { seed, blocks })
}

/// One independent copy per `H` block of the partition.
pub fn resample_independent_blocks(
    process: &Process,
    partition: &BlockPartition,
    seed: u64,
) -> Result<IndependentBlocks> {
    let chain = process.as_markov()?;
    resample_blocks(chain, partition.mu, partition.a, seed, 1)
}

/// Empirical and exact mean losses of each member of a predictor family.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub empirical: Vec<f64>,
    pub expected: Vec<f64>,
    pub terms: usize,
}

impl DeviationReport {
    /// `max_f |empirical_f − expected_f|`.
    pub fn deviation(&self) -> f64 {
        self.empirical.iter().zip(&self.expected).map(|(e, x)| libm::fabs(e - x)).fold(0.0, f64::max)
    }
}

/// Exact stationary mean loss of every predictor reading `d` past
/// observations.
pub fn exact_losses<P: Predictor>(
    process: &MarkovProcess,
    functions: &[P],
    loss: &LossFn,
    d: usize,
) -> Result<Vec<f64>> {
    functions.iter().map(|f| expected_predictor_loss(process, loss, d, f).map_err(BlockError::from)).collect()
}

/// Mean of `u(f(x_{t−d}..x_{t−1}), x_t)` over all `t ≥ d` (zero-based) of
/// every segment, pooled.
pub fn empirical_losses<P: Predictor>(
    segments: &[&Trajectory],
    functions: &[P],
    loss: &LossFn,
    d: usize,
) -> (Vec<f64>, usize) {
    let mut sums = vec![0.0; functions.len()];
    let mut terms = 0;
    let mut y: Vec<f64> = Vec::new();
    for seg in segments {
        for t in d..seg.len() {
            let context = seg.window(t - d, d);
            let x = seg.observation(t);
            for (s, f) in sums.iter_mut().zip(functions) {
                y.resize(f.output_dim(), 0.0);
                f.predict_into(context, &mut y);
                *s += loss.value(&y, x);
            }
            terms += 1;
        }
    }
    let n = terms.max(1) as f64;
    (sums.into_iter().map(|s| s / n).collect(), terms)
}

pub fn deviation_report<P: Predictor>(
    segments: &[&Trajectory],
    functions: &[P],
    loss: &LossFn,
    d: usize,
    process: &Process,
) -> Result<DeviationReport> {
    if functions.is_empty() {
        return Err(BlockError::EmptyFamily);
    }
    let chain = process.as_markov()?;
    let expected = exact_losses(chain, functions, loss, d)?;
    let (empirical, terms) = empirical_losses(segments, functions, loss, d);
    if terms == 0 {
        return Err(BlockError::TooShort(segments.iter().map(|s| s.len()).max().unwrap_or(0)));
    }
    Ok(DeviationReport { empirical, expected, terms })
}

/// `sup_f |(1/N) Σ_t u(f(context_t), x_t) − E u(f(context), x)|` over a
/// finite family, pooled over one trajectory or a set of blocks.
pub fn uniform_deviation<P: Predictor>(
    segments: &[&Trajectory],
    functions: &[P],
    loss: &LossFn,
    d: usize,
    process: &Process,
) -> Result<f64> {
    Ok(deviation_report(segments, functions, loss, d, process)?.deviation())
}

/// Outcome of the deterministic ERM excess-risk inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErmCheck {
    /// Empirical loss of the empirical minimizer minus the best expected
    /// loss in the class.
    pub lhs: f64,
    /// Twice the uniform deviation.
    pub rhs: f64,
    pub holds: bool,
    pub minimizer: usize,
}

pub fn erm_deviation_check<P: Predictor>(
    sample: &Trajectory,
    class: &[P],
    loss: &LossFn,
    process: &Process,
    d: usize,
) -> Result<ErmCheck> {
    let report = deviation_report(&[sample], class, loss, d, process)?;
    Ok(erm_check_from(&report))
}

pub fn erm_check_from(report: &DeviationReport) -> ErmCheck {
    let (minimizer, emp_min) =
        report
            .empirical
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    let best_expected = report.expected.iter().copied().fold(f64::INFINITY, f64::min);
    let lhs = emp_min - best_expected;
    let rhs = 2.0 * report.deviation();
    ErmCheck { lhs, rhs, holds: lhs <= rhs + 1e-12, minimizer }
}

/// Tail bound for the uniform deviation of an `L`-Lipschitz class on
/// `[0,1]^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub horizon: f64,
    pub epsilon: f64,
    pub budget: f64,
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    /// `D = (T / ln T) · (ε / (C2·L))^{m+2}`
    pub d_value: f64,
    /// `2·D^{−m/(m+2)} · exp(−ln T · (C1·D − 1))`, unclamped.
    pub tail_raw: f64,
    /// `tail_raw` clamped to `[0,1]`.
    pub tail: f64,
}

pub fn concentration_bound(horizon: f64, epsilon: f64, budget: f64, m: usize, c1: f64, c2: f64) -> Result<BoundReport> {
    for (name, v) in [("epsilon", epsilon), ("L", budget), ("C1", c1), ("C2", c2)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(BlockError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if !(horizon >= 2.0) || !horizon.is_finite() {
        return Err(BlockError::InvalidArgument(format!("horizon must be at least 2, got {horizon}")));
    }
    let log_t = libm::log(horizon);
    let k = (m + 2) as f64;
    let d_value = horizon / log_t * libm::pow(epsilon / (c2 * budget), k);
    let tail_raw = 2.0 * libm::pow(d_value, -(m as f64) / k) * libm::exp(-log_t * (c1 * d_value - 1.0));
    let tail = if tail_raw.is_nan() { 1.0 } else { tail_raw.clamp(0.0, 1.0) };
    Ok(BoundReport { horizon, epsilon, budget, m, c1, c2, d_value, tail_raw, tail })
}

/// One row of the blocked bound at horizon `T`: block counts, the mixing
/// coefficients at the block length (and shifted by the memory `d`), and the
/// tail bound.
///
/// In plain mode `D` and `tail` are [`concentration_bound`] at `T`. In
/// blocked mode the bound is applied to the `μ` independent blocks (`μ`
/// replaces `T`) and `2μ·β_{a−d}` is added to the tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockedBound {
    pub horizon: usize,
    pub mu: usize,
    pub a: usize,
    pub beta_a: Option<f64>,
    pub beta_a_minus_d: Option<f64>,
    pub d_value: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub budget: f64,
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    pub memory: usize,
    pub blocked: bool,
}

/// `β_k` with `β_0 = 1` (no separation, no decoupling).
fn beta_or_one(process: &MarkovProcess, lag: usize) -> Result<f64> {
    if lag == 0 {
        Ok(1.0)
    } else {
        Ok(process.beta_coefficient(lag as u64)?)
    }
}

pub fn blocked_bound(horizon: usize, inputs: &BoundInputs, process: Option<&MarkovProcess>) -> Result<BlockedBound> {
    let (mu, a) = default_block_counts(horizon)?;
    let beta_a = process.map(|p| beta_or_one(p, a)).transpose()?;
    let beta_shift = process.map(|p| beta_or_one(p, a.saturating_sub(inputs.memory))).transpose()?;
    let BoundInputs { epsilon, budget, m, c1, c2, .. } = *inputs;
    let (d_value, tail) = if inputs.blocked {
        if mu < 2 {
            return Err(BlockError::TooShort(horizon));
        }
        let report = concentration_bound(mu as f64, epsilon, budget, m, c1, c2)?;
        let coupling = beta_shift.map_or(0.0, |b| 2.0 * mu as f64 * b);
        (report.d_value, (report.tail_raw + coupling).clamp(0.0, 1.0))
    } else {
        let report = concentration_bound(horizon as f64, epsilon, budget, m, c1, c2)?;
        (report.d_value, report.tail)
    };
    Ok(BlockedBound { horizon, mu, a, beta_a, beta_a_minus_d: beta_shift, d_value, tail })
}

/// Per-seed outcome of the block decomposition experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YuSeedOutcome {
    pub seed: u64,
    pub original_deviation: f64,
    pub blocked_deviation: f64,
}

/// Setup shared by all seeds of [`yu_decomposition_check`].
#[derive(Debug, Clone)]
pub struct YuSetup<'a, P> {
    pub process: &'a MarkovProcess,
    pub functions: &'a [P],
    pub loss: LossFn,
    /// Context length read by the functions.
    pub memory: usize,
    pub horizon: usize,
    pub epsilon: f64,
}

impl<'a, P: Predictor> YuSetup<'a, P> {
    pub fn counts(&self) -> Result<(usize, usize)> {
        default_block_counts(self.horizon)
    }

    /// Exact expected losses, computed once for all seeds.
    pub fn expected(&self) -> Result<Vec<f64>> {
        if self.functions.is_empty() {
            return Err(BlockError::EmptyFamily);
        }
        exact_losses(self.process, self.functions, &self.loss, self.memory)
    }

    /// Deviation of the original path over its first `2μa` loss terms, and
    /// of `μ` independent copies of the `H` blocks.
    ///
    /// A loss term at index `i` reads `x_i..x_{i+d}`, so the term process is
    /// itself stationary with coefficients `β_{m−d}`, and each copy is a
    /// stationary run of `a + d` observations.
    pub fn run_seed(&self, seed: u64, expected: &[f64]) -> Result<YuSeedOutcome> {
        let (mu, a) = self.counts()?;
        let d = self.memory;
        let path = self.process.sample_with(2 * mu * a + d, seed, 0)?;
        let (emp, _) = empirical_losses(&[&path], self.functions, &self.loss, d);
        let original_deviation = max_gap(&emp, expected);
        let blocks = resample_blocks(self.process, mu, a + d, seed, 1)?;
        let refs: Vec<&Trajectory> = blocks.blocks.iter().collect();
        let (emp, _) = empirical_losses(&refs, self.functions, &self.loss, d);
        let blocked_deviation = max_gap(&emp, expected);
        Ok(YuSeedOutcome { seed, original_deviation, blocked_deviation })
    }

    pub fn summarize(&self, outcomes: &[YuSeedOutcome]) -> Result<YuCheck> {
        let (mu, a) = self.counts()?;
        let n = outcomes.len() as f64;
        if outcomes.is_empty() {
            return Err(BlockError::InvalidArgument("no seeds".into()));
        }
        let lhs_freq = outcomes.iter().filter(|o| o.original_deviation > self.epsilon).count() as f64 / n;
        // |(1/μ) Σ_j f_H(Ψ_j) − E f_H| > aε  ⇔  per-term block deviation > ε
        let blocked_freq = outcomes.iter().filter(|o| o.blocked_deviation > self.epsilon).count() as f64 / n;
        let beta = beta_or_one(self.process, a.saturating_sub(self.memory))?;
        let coupling = 2.0 * mu as f64 * beta;
        let rhs = 2.0 * blocked_freq + coupling;
        let se_lhs = libm::sqrt(lhs_freq * (1.0 - lhs_freq) / n);
        let se_blk = libm::sqrt(blocked_freq * (1.0 - blocked_freq) / n);
        let std_error = libm::sqrt(se_lhs * se_lhs + 4.0 * se_blk * se_blk);
        Ok(YuCheck {
            mu,
            a,
            lhs_freq,
            blocked_freq,
            coupling,
            rhs,
            std_error,
            holds: lhs_freq <= rhs + 3.0 * std_error,
        })
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max)
}

/// Monte Carlo comparison of `P(sup_f |dev| > ε)` on the original path with
/// `2·P(block dev > ε) + 2μ·β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YuCheck {
    pub mu: usize,
    pub a: usize,
    pub lhs_freq: f64,
    pub blocked_freq: f64,
    /// `2μ·β_{a−d}`
    pub coupling: f64,
    pub rhs: f64,
    pub std_error: f64,
    pub holds: bool,
}

/// Runs every seed sequentially and summarizes.
pub fn yu_decomposition_check<P: Predictor>(setup: &YuSetup<'_, P>, seeds: &[u64]) -> Result<YuCheck> {
    let expected = setup.expected()?;
    let outcomes = seeds.iter().map(|&s| setup.run_seed(s, &expected)).collect::<Result<Vec<_>>>()?;
    setup.summarize(&outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::ConstantPredictor;

    #[test]
    fn default_counts() {
        assert_eq!(default_block_counts(200).unwrap(), (10, 10));
        assert_eq!(default_block_counts(8).unwrap(), (2, 2));
        assert_eq!(default_block_counts(10).unwrap(), (3, 1));
        assert_eq!(default_block_counts(2).unwrap(), (1, 1));
        assert_eq!(default_block_counts(3), Err(BlockError::TooShort(3)));
        assert_eq!(default_block_counts(1), Err(BlockError::TooShort(1)));
        let p = block_partition(10, 3, 1).unwrap();
        assert_eq!(p.remainder, Some(7..=10));
        assert_eq!(p.remainder_len(), 4);
    }

    #[test]
    fn partition_examples() {
        let p = block_partition(8, 2, 2).unwrap();
        assert_eq!(p.h_blocks, vec![1..=2, 5..=6]);
        assert_eq!(p.t_blocks, vec![3..=4, 7..=8]);
        assert_eq!(p.remainder, None);

        let p = block_partition(10, 2, 2).unwrap();
        assert_eq!(p.h_blocks, vec![1..=2, 5..=6]);
        assert_eq!(p.remainder, Some(9..=10));

        let p = block_partition(9, 1, 3).unwrap();
        assert_eq!(p.h_blocks, vec![1..=3]);
        assert_eq!(p.t_blocks, vec![4..=6]);

        assert!(matches!(block_partition(7, 2, 2), Err(BlockError::Oversized { .. })));
    }

    #[test]
    fn resampled_blocks_of_trivial_chains() {
        let part = block_partition(40, 4, 5).unwrap();
        let cyc: Process = MarkovProcess::two_cycle().into();
        let blocks = resample_independent_blocks(&cyc, &part, 11).unwrap();
        assert_eq!(blocks.blocks.len(), 4);
        for b in &blocks.blocks {
            assert_eq!(b.len(), 5);
            let v = b.values();
            assert!(v.windows(2).all(|w| w[0] != w[1]));
        }
        let one: Process = MarkovProcess::constant(0.6).unwrap().into();
        let blocks = resample_independent_blocks(&one, &part, 11).unwrap();
        assert!(blocks.blocks.iter().all(|b| b.values().iter().all(|&v| v == 0.6)));

        let ar: Process = crate::processes::ArProcess::new(vec![0.1], 0.1, 0.5, vec![0.5]).unwrap().into();
        assert!(matches!(resample_independent_blocks(&ar, &part, 1), Err(BlockError::Process(_))));
    }

    #[test]
    fn deviation_vanishes_on_the_cycle() {
        let cyc = MarkovProcess::two_cycle();
        let proc: Process = cyc.clone().into();
        let f = [ConstantPredictor(vec![0.3]), ConstantPredictor(vec![0.9])];
        let t = cyc.sample_trajectory(64, 5).unwrap();
        assert!(uniform_deviation(&[&t], &f, &LossFn::squared(), 0, &proc).unwrap() < 1e-12);
        let t = cyc.sample_trajectory(65, 5).unwrap();
        assert!(uniform_deviation(&[&t], &f, &LossFn::squared(), 1, &proc).unwrap() < 1e-12);
        let empty: [ConstantPredictor; 0] = [];
        assert_eq!(uniform_deviation(&[&t], &empty, &LossFn::squared(), 1, &proc), Err(BlockError::EmptyFamily));
    }

    #[test]
    fn erm_singleton() {
        let p = MarkovProcess::two_state(0.9, 0.9).unwrap();
        let proc: Process = p.clone().into();
        let t = p.sample_trajectory(300, 2).unwrap();
        let c = erm_deviation_check(&t, &[ConstantPredictor(vec![0.2])], &LossFn::squared(), &proc, 1).unwrap();
        assert!(c.holds);
        assert!((c.rhs - 2.0 * c.lhs.abs()).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        let r = concentration_bound(100.0, 2.0, 2.0, 3, 1.0, 1.0).unwrap();
        assert!((r.d_value - 21.714724095162587).abs() < 1e-10);
        let a = concentration_bound(100.0, 0.5, 1.0, 0, 1.0, 1.0).unwrap();
        let b = concentration_bound(100.0, 0.5, 2.0, 0, 1.0, 1.0).unwrap();
        assert!((a.d_value / b.d_value - 4.0).abs() < 1e-12);
        assert!(concentration_bound(1.0, 1.0, 1.0, 1, 1.0, 1.0).is_err());
        assert!(concentration_bound(10.0, 0.0, 1.0, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn blocked_bound_betas() {
        let p = MarkovProcess::two_state(0.9, 0.9).unwrap();
        let inputs = BoundInputs { epsilon: 1.0, budget: 1.0, m: 1, c1: 1.0, c2: 1.0, memory: 1, blocked: false };
        let row = blocked_bound(200, &inputs, Some(&p)).unwrap();
        assert_eq!((row.mu, row.a), (10, 10));
        assert!((row.beta_a.unwrap() - 0.5 * 0.8f64.powi(10)).abs() < 1e-12);
        assert!((row.beta_a_minus_d.unwrap() - 0.5 * 0.8f64.powi(9)).abs() < 1e-12);
        let plain = concentration_bound(200.0, 1.0, 1.0, 1, 1.0, 1.0).unwrap();
        assert_eq!(row.d_value, plain.d_value);

        let blocked = blocked_bound(200, &BoundInputs { blocked: true, ..inputs }, Some(&p)).unwrap();
        let on_mu = concentration_bound(10.0, 1.0, 1.0, 1, 1.0, 1.0).unwrap();
        assert_eq!(blocked.d_value, on_mu.d_value);
        assert!(blocked.tail >= (20.0 * blocked.beta_a_minus_d.unwrap()).min(1.0) - 1e-15);
        assert_eq!(blocked_bound(200, &inputs, None).unwrap().beta_a, None);
    }
}
