//! Flat `key = value` experiment files with dotted section prefixes.
//!
//! ```text
//! # stay-0.9 chain
//! process.kind = markov
//! process.order = 1
//! process.kernel = 0.9 0.1; 0.1 0.9
//! process.embedding = 0; 1
//! run.horizon = 50000
//! run.seeds = 1 2 3 4 5
//! ```
//!
//! Matrix-valued entries separate rows with `;` and entries with spaces.
//! Blank lines and lines starting with `#` are ignored. Every key except
//! the process description has a default; [`ExperimentConfig::emit`] writes
//! all keys in a fixed order, so emitting a parsed file and parsing it again
//! gives back the same configuration.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use ergolip_core::harness::RetrainPolicy;
use ergolip_core::oracle::{LossFn, LossKind};
use ergolip_core::processes::{ArProcess, MarkovProcess, Process, ProcessError};
use ergolip_core::Matrix;
use thiserror::Error;

/// A configuration problem, located by line (when the key was present) and
/// by field name.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}, field {}: {}", self.field, self.message),
            None => write!(f, "field {}: {}", self.field, self.message),
        }
    }
}

type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessSpec {
    /// `ergodic = false` admits periodic or reducible kernels such as the
    /// deterministic 2-cycle.
    Markov {
        order: usize,
        kernel: Vec<Vec<f64>>,
        embedding: Vec<Vec<f64>>,
        ergodic: bool,
    },
    Ar {
        coefficients: Vec<f64>,
        noise: f64,
        mean: f64,
        init: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitterKind {
    Envelope,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSettings {
    pub depth: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for MlpSettings {
    fn default() -> Self {
        let d = ergolip_core::lipschitz::MlpConfig::default();
        Self {
            depth: d.depth,
            width: d.width,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub fitter: FitterKind,
    pub l0: f64,
    /// Fixed budget instead of the growing schedule.
    pub frozen: Option<f64>,
    pub retrain: RetrainPolicy,
    /// Context length `d`; defaults to the process order.
    pub memory: Option<usize>,
    pub mlp: MlpSettings,
    pub oracle: bool,
    pub constant: bool,
    pub histogram: bool,
    pub histogram_resolutions: Vec<usize>,
    pub histogram_rate: f64,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            fitter: FitterKind::Envelope,
            l0: 1.0,
            frozen: None,
            retrain: RetrainPolicy::Doubling,
            memory: None,
            mlp: MlpSettings::default(),
            oracle: true,
            constant: false,
            histogram: false,
            histogram_resolutions: vec![1, 2, 4, 8],
            histogram_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSpec {
    pub horizons: Vec<usize>,
    pub epsilon: f64,
    pub budget: f64,
    /// Domain dimension; defaults to `n · d`.
    pub m: Option<usize>,
    pub c1: f64,
    pub c2: f64,
    pub blocked: bool,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self { horizons: vec![100, 1000, 10_000], epsilon: 0.5, budget: 1.0, m: None, c1: 1.0, c2: 0.5, blocked: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlocksSpec {
    /// Horizon of the partition; defaults to `run.horizon`.
    pub horizon: Option<usize>,
    pub functions: usize,
    pub epsilon: f64,
    pub seeds: usize,
}

impl Default for BlocksSpec {
    fn default() -> Self {
        Self { horizon: None, functions: 20, epsilon: 0.05, seeds: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub process: ProcessSpec,
    pub loss: LossKind,
    pub strategy: StrategySpec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub out: String,
    pub bounds: BoundsSpec,
    pub blocks: BlocksSpec,
}

impl ExperimentConfig {
    pub fn with_process(process: ProcessSpec) -> Self {
        Self {
            process,
            loss: LossKind::Squared,
            strategy: StrategySpec::default(),
            horizon: 10_000,
            seeds: vec![1],
            out: "out".into(),
            bounds: BoundsSpec::default(),
            blocks: BlocksSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, crate::LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::LabError::io(path, e))?;
        Ok(text.parse()?)
    }

    /// Canonical text form; all keys, fixed order.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.process {
            ProcessSpec::Markov { order, kernel, embedding, ergodic } => {
                put("process.kind", "markov".into());
                put("process.order", order.to_string());
                put("process.kernel", rows(kernel));
                put("process.embedding", rows(embedding));
                put("process.ergodic", ergodic.to_string());
            }
            ProcessSpec::Ar { coefficients, noise, mean, init } => {
                put("process.kind", "ar".into());
                put("process.coefficients", list(coefficients));
                put("process.noise", noise.to_string());
                put("process.mean", mean.to_string());
                put("process.init", list(init));
            }
        }
        match self.loss {
            LossKind::Squared => put("loss.kind", "squared".into()),
            LossKind::Absolute => put("loss.kind", "absolute".into()),
            LossKind::Pinball(tau) => {
                put("loss.kind", "pinball".into());
                put("loss.tau", tau.to_string());
            }
        }
        let st = &self.strategy;
        put("strategy.fitter", if st.fitter == FitterKind::Envelope { "envelope" } else { "mlp" }.into());
        put("strategy.l0", st.l0.to_string());
        if let Some(l) = st.frozen {
            put("strategy.frozen", l.to_string());
        }
        put(
            "strategy.retrain",
            match st.retrain {
                RetrainPolicy::Doubling => "doubling".into(),
                RetrainPolicy::Every(p) => format!("every {p}"),
            },
        );
        if let Some(d) = st.memory {
            put("strategy.memory", d.to_string());
        }
        put("strategy.mlp.depth", st.mlp.depth.to_string());
        put("strategy.mlp.width", st.mlp.width.to_string());
        put("strategy.mlp.epochs", st.mlp.epochs.to_string());
        put("strategy.mlp.batch_size", st.mlp.batch_size.to_string());
        put("strategy.mlp.learning_rate", st.mlp.learning_rate.to_string());
        put("baseline.oracle", st.oracle.to_string());
        put("baseline.constant", st.constant.to_string());
        put("baseline.histogram", st.histogram.to_string());
        put("baseline.histogram.resolutions", list(&st.histogram_resolutions));
        put("baseline.histogram.rate", st.histogram_rate.to_string());
        put("run.horizon", self.horizon.to_string());
        put("run.seeds", list(&self.seeds));
        put("run.out", self.out.clone());
        let b = &self.bounds;
        put("bounds.horizons", list(&b.horizons));
        put("bounds.epsilon", b.epsilon.to_string());
        put("bounds.budget", b.budget.to_string());
        if let Some(m) = b.m {
            put("bounds.m", m.to_string());
        }
        put("bounds.c1", b.c1.to_string());
        put("bounds.c2", b.c2.to_string());
        put("bounds.blocked", b.blocked.to_string());
        if let Some(h) = self.blocks.horizon {
            put("blocks.horizon", h.to_string());
        }
        put("blocks.functions", self.blocks.functions.to_string());
        put("blocks.epsilon", self.blocks.epsilon.to_string());
        put("blocks.seeds", self.blocks.seeds.to_string());
        s
    }

    /// Context length used by the strategies.
    pub fn memory(&self) -> usize {
        self.strategy.memory.unwrap_or(match &self.process {
            ProcessSpec::Markov { order, .. } => *order,
            ProcessSpec::Ar { coefficients, .. } => coefficients.len(),
        })
    }

    /// Observation dimension `n`.
    pub fn dim(&self) -> usize {
        match &self.process {
            ProcessSpec::Markov { embedding, .. } => embedding.first().map_or(0, Vec::len),
            ProcessSpec::Ar { .. } => 1,
        }
    }

    pub fn loss_fn(&self) -> LossFn {
        LossFn::new(self.loss).expect("loss validated at parse time")
    }

    pub fn build_process(&self) -> Result<Process, ProcessError> {
        match &self.process {
            ProcessSpec::Markov { order, kernel, embedding, ergodic } => {
                let builder = MarkovProcess::builder(Matrix::from_rows(kernel), embedding.clone(), *order);
                Ok(builder.require_ergodic(*ergodic).build()?.into())
            }
            ProcessSpec::Ar { coefficients, noise, mean, init } => {
                Ok(ArProcess::new(coefficients.clone(), *noise, *mean, init.clone())?.into())
            }
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn rows(m: &[Vec<f64>]) -> String {
    m.iter().map(|r| list(r)).collect::<Vec<_>>().join("; ")
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(ConfigError::new(Some(line), trimmed, "expected `key = value`"));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::new(Some(line), "", "empty key"));
            }
            if let Some((first, _)) = map.get(&key) {
                return Err(ConfigError::new(Some(line), key, format!("duplicate key, first set on line {first}")));
            }
            map.insert(key, (line, v.trim().to_string()));
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|e| e.0)
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or_else(|| ConfigError::new(None, key, "missing required key"))
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<Option<(usize, T)>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(|x| Some((line, x)))
                .map_err(|_| ConfigError::new(Some(line), key, format!("cannot parse `{v}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<(Option<usize>, T)> {
        Ok(match self.value(key)? {
            Some((line, v)) => (Some(line), v),
            None => (None, default),
        })
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((key, (line, _))) => Err(ConfigError::new(Some(line), key, "unknown key")),
            None => Ok(()),
        }
    }
}

fn parse_list<T: FromStr>(line: usize, key: &str, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|t| t.parse().map_err(|_| ConfigError::new(Some(line), key, format!("cannot parse `{t}`"))))
        .collect()
}

fn parse_rows(line: usize, key: &str, text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';').map(|r| parse_list(line, key, r)).collect()
}

fn check(ok: bool, line: Option<usize>, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(line, key, message))
    }
}

fn positive(line: Option<usize>, key: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), line, key, "must be positive and finite")
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let (kind_line, kind) = e.required("process.kind")?;
        let process = match kind.as_str() {
            "markov" => {
                let kernel_line = e.line_of("process.kernel");
                let (ol, order) = e.or("process.order", 1usize)?;
                check(order >= 1, ol, "process.order", "must be at least 1")?;
                let (kl, kernel) = e.required("process.kernel")?;
                let kernel = parse_rows(kl, "process.kernel", &kernel)?;
                let (el, embedding) = e.required("process.embedding")?;
                let embedding = parse_rows(el, "process.embedding", &embedding)?;
                let ergodic = e.or("process.ergodic", true)?.1;
                let spec = ProcessSpec::Markov { order, kernel, embedding, ergodic };
                // the core constructor does the full validation; its message
                // names the offending row
                if let Err(err) = ExperimentConfig::with_process(spec.clone()).build_process() {
                    let (line, field) = match err {
                        ProcessError::Embedding(_) => (Some(el), "process.embedding"),
                        _ => (kernel_line, "process.kernel"),
                    };
                    return Err(ConfigError::new(line, field, err.to_string()));
                }
                spec
            }
            "ar" => {
                let (cl, c) = e.required("process.coefficients")?;
                let coefficients = parse_list(cl, "process.coefficients", &c)?;
                let (nl, noise) = e.or("process.noise", 0.1)?;
                let (_, mean) = e.or("process.mean", 0.5)?;
                let init = match e.take("process.init") {
                    Some((il, v)) => parse_list(il, "process.init", &v)?,
                    None => vec![0.5; coefficients.len()],
                };
                let spec = ProcessSpec::Ar { coefficients, noise, mean, init };
                if let Err(err) = ExperimentConfig::with_process(spec.clone()).build_process() {
                    return Err(ConfigError::new(nl.or(Some(cl)), "process", err.to_string()));
                }
                spec
            }
            other => {
                return Err(ConfigError::new(
                    Some(kind_line),
                    "process.kind",
                    format!("unknown kind `{other}`, expected markov or ar"),
                ))
            }
        };

        let (ll, loss_kind) = e.or("loss.kind", String::from("squared"))?;
        let loss = match loss_kind.as_str() {
            "squared" => LossKind::Squared,
            "absolute" => LossKind::Absolute,
            "pinball" => {
                let (tl, tau) = e.or("loss.tau", 0.5)?;
                check(tau > 0.0 && tau < 1.0, tl, "loss.tau", "must lie in (0,1)")?;
                LossKind::Pinball(tau)
            }
            other => return Err(ConfigError::new(ll, "loss.kind", format!("unknown loss `{other}`"))),
        };

        let mut st = StrategySpec::default();
        let (fl, fitter) = e.or("strategy.fitter", String::from("envelope"))?;
        st.fitter = match fitter.as_str() {
            "envelope" => FitterKind::Envelope,
            "mlp" => FitterKind::Mlp,
            other => return Err(ConfigError::new(fl, "strategy.fitter", format!("unknown fitter `{other}`"))),
        };
        let (l, l0) = e.or("strategy.l0", st.l0)?;
        positive(l, "strategy.l0", l0)?;
        st.l0 = l0;
        if let Some((l, v)) = e.value::<f64>("strategy.frozen")? {
            positive(Some(l), "strategy.frozen", v)?;
            st.frozen = Some(v);
        }
        if let Some((l, v)) = e.take("strategy.retrain") {
            st.retrain = match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["doubling"] => RetrainPolicy::Doubling,
                ["every", p] => match p.parse::<usize>() {
                    Ok(p) if p > 0 => RetrainPolicy::Every(p),
                    _ => {
                        return Err(ConfigError::new(Some(l), "strategy.retrain", "period must be a positive integer"))
                    }
                },
                _ => return Err(ConfigError::new(Some(l), "strategy.retrain", "expected `doubling` or `every <p>`")),
            };
        }
        st.memory = e.value::<usize>("strategy.memory")?.map(|(_, v)| v);
        let m = &mut st.mlp;
        for (key, slot) in [
            ("strategy.mlp.depth", &mut m.depth),
            ("strategy.mlp.width", &mut m.width),
            ("strategy.mlp.epochs", &mut m.epochs),
            ("strategy.mlp.batch_size", &mut m.batch_size),
        ] {
            let (l, v) = e.or(key, *slot)?;
            check(v >= 1, l, key, "must be at least 1")?;
            *slot = v;
        }
        let (l, lr) = e.or("strategy.mlp.learning_rate", m.learning_rate)?;
        positive(l, "strategy.mlp.learning_rate", lr)?;
        m.learning_rate = lr;
        st.oracle = e.or("baseline.oracle", st.oracle)?.1;
        st.constant = e.or("baseline.constant", st.constant)?.1;
        st.histogram = e.or("baseline.histogram", st.histogram)?.1;
        if let Some((l, v)) = e.take("baseline.histogram.resolutions") {
            let r: Vec<usize> = parse_list(l, "baseline.histogram.resolutions", &v)?;
            check(!r.is_empty() && !r.contains(&0), Some(l), "baseline.histogram.resolutions", "need positive levels")?;
            st.histogram_resolutions = r;
        }
        let (l, rate) = e.or("baseline.histogram.rate", st.histogram_rate)?;
        positive(l, "baseline.histogram.rate", rate)?;
        st.histogram_rate = rate;

        let (hl, horizon) = e.or("run.horizon", 10_000usize)?;
        let seeds = match e.take("run.seeds") {
            Some((l, v)) => {
                let s: Vec<u64> = parse_list(l, "run.seeds", &v)?;
                check(!s.is_empty(), Some(l), "run.seeds", "need at least one seed")?;
                s
            }
            None => vec![1],
        };
        let out = e.or("run.out", String::from("out"))?.1;

        let mut bounds = BoundsSpec::default();
        if let Some((l, v)) = e.take("bounds.horizons") {
            bounds.horizons = parse_list(l, "bounds.horizons", &v)?;
            check(bounds.horizons.iter().all(|&t| t >= 2), Some(l), "bounds.horizons", "horizons must be at least 2")?;
        }
        for (key, slot) in [
            ("bounds.epsilon", &mut bounds.epsilon),
            ("bounds.budget", &mut bounds.budget),
            ("bounds.c1", &mut bounds.c1),
            ("bounds.c2", &mut bounds.c2),
        ] {
            let (l, v) = e.or(key, *slot)?;
            positive(l, key, v)?;
            *slot = v;
        }
        bounds.m = e.value::<usize>("bounds.m")?.map(|(_, v)| v);
        bounds.blocked = e.or("bounds.blocked", false)?.1;

        let mut blocks = BlocksSpec::default();
        blocks.horizon = e.value::<usize>("blocks.horizon")?.map(|(_, v)| v);
        blocks.functions = e.or("blocks.functions", blocks.functions)?.1;
        let (l, eps) = e.or("blocks.epsilon", blocks.epsilon)?;
        positive(l, "blocks.epsilon", eps)?;
        blocks.epsilon = eps;
        blocks.seeds = e.or("blocks.seeds", blocks.seeds)?.1;
        e.finish()?;

        let config = ExperimentConfig { process, loss, strategy: st, horizon, seeds, out, bounds, blocks };
        check(horizon > config.memory() + 1, hl, "run.horizon", "must exceed the memory by at least two")?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAY: &str = "process.kind = markov\nprocess.kernel = 0.9 0.1; 0.1 0.9\nprocess.embedding = 0; 1\n";

    #[test]
    fn defaults_fill_in() {
        let c: ExperimentConfig = STAY.parse().unwrap();
        assert_eq!(c.memory(), 1);
        assert_eq!(c.dim(), 1);
        assert_eq!(c.seeds, vec![1]);
        assert_eq!(c.strategy.retrain, RetrainPolicy::Doubling);
    }

    #[test]
    fn emit_parse_emit_is_identity() {
        let mut c: ExperimentConfig = STAY.parse().unwrap();
        c.loss = LossKind::Pinball(0.3);
        c.strategy.frozen = Some(0.01);
        c.strategy.retrain = RetrainPolicy::Every(7);
        c.bounds.m = Some(3);
        c.seeds = vec![4, 5];
        let text = c.emit();
        let back: ExperimentConfig = text.parse().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.emit(), text);
    }

    #[test]
    fn bad_row_is_located() {
        let text = "process.kind = markov\n\nprocess.kernel = 0.9 0.1; 0.2 0.9\nprocess.embedding = 0; 1\n";
        let err = text.parse::<ExperimentConfig>().unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "process.kernel");
        assert!(err.message.contains("row 1"), "{err}");
    }

    #[test]
    fn periodic_kernel_needs_opt_out() {
        let cycle = "process.kind = markov\nprocess.kernel = 0 1; 1 0\nprocess.embedding = 0; 1\n";
        let err = cycle.parse::<ExperimentConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (Some(2), "process.kernel"));
        let c: ExperimentConfig = format!("{cycle}process.ergodic = false\n").parse().unwrap();
        assert!(c.build_process().is_ok());
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = format!("{STAY}run.horizn = 5\n").parse::<ExperimentConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (Some(4), "run.horizn"));
        let err = format!("{STAY}run.seeds = 1\nrun.seeds = 2\n").parse::<ExperimentConfig>().unwrap_err();
        assert_eq!(err.line, Some(5));
        let err = format!("{STAY}run.seeds = 1 x\n").parse::<ExperimentConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (Some(4), "run.seeds"));
        let err = "process.kernel = 1\n".parse::<ExperimentConfig>().unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (None, "process.kind"));
    }

    #[test]
    fn autoregression_round_trip() {
        let c: ExperimentConfig =
            "process.kind = ar\nprocess.coefficients = 0.5 0.2\nprocess.noise = 0.1\n".parse().unwrap();
        assert_eq!(c.memory(), 2);
        assert_eq!(c.emit().parse::<ExperimentConfig>().unwrap(), c);
        let err = "process.kind = ar\nprocess.coefficients = 0.9 0.2\n".parse::<ExperimentConfig>().unwrap_err();
        assert_eq!(err.field, "process");
    }
}
