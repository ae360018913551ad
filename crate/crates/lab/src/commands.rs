//! Subcommand implementations. Each writes its files under the output
//! directory and returns the text to print.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ergolip_core::blocking::{
    block_partition, blocked_bound, default_block_counts, BoundInputs, YuSeedOutcome, YuSetup,
};
use ergolip_core::harness::{
    histogram_expert_strategy, lipschitz_erm_strategy, run_online, BudgetRule, ConstantStrategy, Fitter,
    OracleStrategy, RunMetrics, Strategy,
};
use ergolip_core::lipschitz::{random_lipschitz_fn, LipschitzFn, MlpConfig, Schedule};
use ergolip_core::oracle::{optimal_risk, OptimalRisk};
use ergolip_core::processes::{MarkovProcess, Process};
use ergolip_core::rng;
use rayon::prelude::*;

use crate::chart::{self, Series};
use crate::config::{BoundsSpec, ConfigError, ExperimentConfig, FitterKind};
use crate::formats::{self, MetricsRow, SummaryRow};
use crate::LabError;

type Result<T, E = LabError> = std::result::Result<T, E>;

pub const ORACLE_FILE: &str = "oracle.csv";
pub const ORACLE_CONTEXTS_FILE: &str = "oracle_contexts.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CHART_FILE: &str = "report.svg";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn markov(process: &Process) -> Option<&MarkovProcess> {
    match process {
        Process::Markov(p) => Some(p),
        Process::Ar(_) => None,
    }
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let process = cfg.build_process()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let traj = process.sample(cfg.horizon, seed)?;
            let path = out.join(formats::trajectory_file_name(seed));
            formats::write_trajectory(&path, &traj)?;
            Ok(path)
        })
        .collect()
}

struct SeedRun {
    seed: u64,
    runs: Vec<RunMetrics>,
    rows: Vec<Vec<MetricsRow>>,
    fitted: Option<(String, ergolip_core::harness::Fitted)>,
}

fn budget_rule(cfg: &ExperimentConfig) -> Result<BudgetRule> {
    Ok(match cfg.strategy.frozen {
        Some(l) => BudgetRule::Frozen(l),
        None => BudgetRule::Scheduled(Schedule::for_contexts(cfg.strategy.l0, cfg.dim(), cfg.memory())?),
    })
}

fn run_seed(
    cfg: &ExperimentConfig,
    process: &Process,
    oracle: Option<&OptimalRisk>,
    rule: BudgetRule,
    seed: u64,
) -> Result<SeedRun> {
    let (memory, dim, loss, st) = (cfg.memory(), cfg.dim(), cfg.loss_fn(), &cfg.strategy);
    let traj = process.sample(cfg.horizon, seed)?;
    let fitter = match st.fitter {
        FitterKind::Envelope => Fitter::Envelope,
        FitterKind::Mlp => Fitter::Mlp(MlpConfig {
            budget: cfg.strategy.l0,
            depth: st.mlp.depth,
            width: st.mlp.width,
            epochs: st.mlp.epochs,
            batch_size: st.mlp.batch_size,
            learning_rate: st.mlp.learning_rate,
            seed,
        }),
    };
    let mut erm = lipschitz_erm_strategy(fitter, rule, st.retrain, loss, memory, dim);
    let mut baselines: Vec<Box<dyn Strategy>> = Vec::new();
    if let (true, Some(p), Some(_)) = (st.oracle, markov(process), oracle) {
        baselines.push(Box::new(OracleStrategy::new(p.clone(), &loss, memory)?));
    }
    if st.constant {
        baselines.push(Box::new(ConstantStrategy { action: vec![0.5; dim] }));
    }
    if st.histogram {
        baselines.push(Box::new(histogram_expert_strategy(&st.histogram_resolutions, st.histogram_rate, loss, dim)?));
    }

    let optimal = oracle.map(|o| o.value);
    let mut runs = Vec::new();
    let m = run_online(&traj, &mut erm, &loss, memory)?;
    runs.push(m);
    let fitted = erm.fitted().cloned().map(|f| (erm.name().to_string(), f));
    for s in &mut baselines {
        let m = run_online(&traj, s.as_mut(), &loss, memory)?;
        runs.push(m);
    }
    let rows = runs.iter().map(|m| formats::metrics_rows(m, optimal)).collect();
    Ok(SeedRun { seed, runs, rows, fitted })
}

/// Runs every strategy on every seed (seeds in parallel), writes the
/// per-seed files and then the report.
pub fn run(cfg: &ExperimentConfig, out: &Path, per_step: bool) -> Result<String> {
    let process = cfg.build_process()?;
    let oracle = match markov(&process) {
        Some(p) => Some(optimal_risk(p, &cfg.loss_fn(), cfg.memory())?),
        None => None,
    };
    let rule = budget_rule(cfg)?;
    let mut results: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &process, oracle.as_ref(), rule, seed))
        .collect::<Result<_>>()?;
    results.sort_by_key(|r| r.seed);

    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    match &oracle {
        Some(o) => {
            write_oracle_tables(o, out)?;
        }
        // a stale table would attach the wrong L* to this run
        None => {
            let _ = fs::remove_file(out.join(ORACLE_FILE));
        }
    }
    for r in &results {
        for (m, rows) in r.runs.iter().zip(&r.rows) {
            formats::write_metrics(&out.join(formats::metrics_file_name(&m.strategy, r.seed)), rows)?;
            if per_step {
                formats::write_steps(&out.join(formats::steps_file_name(&m.strategy, r.seed)), m)?;
            }
        }
        if let Some((name, f)) = &r.fitted {
            formats::write_predictor(&out.join(format!("predictor_{name}_{}.txt", r.seed)), f)?;
        }
    }
    report(out)
}

fn read_optimal(out: &Path) -> Result<Option<f64>> {
    let path = out.join(ORACLE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let value = text.lines().nth(1).and_then(|l| l.split(',').nth(1)).and_then(|v| v.parse().ok());
    value.map(Some).ok_or_else(|| LabError::Format { path, line: 2, message: "expected memory,L_star".into() })
}

/// Rebuilds `summary.csv`, `curve.csv` and the chart from the metrics files
/// in `out`.
pub fn report(out: &Path) -> Result<String> {
    let optimal = read_optimal(out)?;
    let mut by_strategy: BTreeMap<String, Vec<Vec<MetricsRow>>> = BTreeMap::new();
    for (strategy, _, path) in formats::list_metrics(out)? {
        by_strategy.entry(strategy).or_default().push(formats::read_metrics(&path)?);
    }
    if by_strategy.is_empty() {
        return Err(ConfigError::new(None, "run.out", format!("no metrics files in {}", out.display())).into());
    }

    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for (strategy, runs) in &by_strategy {
        let finals: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.last()).collect();
        let gaps: Option<Vec<f64>> = finals.iter().map(|r| r.gap).collect();
        summary.push(SummaryRow {
            strategy: strategy.clone(),
            seeds: runs.len(),
            median_final_avg_loss: median(&finals.iter().map(|r| r.avg_loss).collect::<Vec<_>>()),
            median_final_gap: gaps.map(|g| median(&g)),
            optimal,
        });
        let mut at: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in runs.iter().flatten() {
            at.entry(row.checkpoint).or_default().push(row.avg_loss);
        }
        curves.push((strategy.clone(), at.into_iter().map(|(t, v)| (t, median(&v))).collect::<Vec<_>>()));
    }
    formats::write_summary(&out.join(SUMMARY_FILE), &summary)?;
    formats::write_curve(&out.join(CURVE_FILE), &curves)?;
    let series: Vec<Series<'_>> = curves.iter().map(|(n, p)| Series { name: n, points: p }).collect();
    write(&out.join(CHART_FILE), &chart::render("median average loss", &series, optimal))?;

    let mut text = String::from("strategy,seeds,median_final_avg_loss,median_final_gap\n");
    for r in &summary {
        let gap = r.median_final_gap.map_or(String::new(), |g| g.to_string());
        let _ = writeln!(text, "{},{},{},{gap}", r.strategy, r.seeds, r.median_final_avg_loss);
    }
    if let Some(o) = optimal {
        let _ = writeln!(text, "L* = {o}");
    }
    Ok(text)
}

fn write_oracle_tables(o: &OptimalRisk, out: &Path) -> Result<(String, String)> {
    let head = format!("memory,L_star\n{},{}\n", o.memory, o.value);
    let mut contexts = String::from("context,weight,action,risk\n");
    for c in &o.per_context {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            contexts,
            "{},{},{},{}",
            join(&mut c.context.iter().map(usize::to_string)),
            c.weight,
            join(&mut c.action.iter().map(f64::to_string)),
            c.risk
        );
    }
    write(&out.join(ORACLE_FILE), &head)?;
    write(&out.join(ORACLE_CONTEXTS_FILE), &contexts)?;
    Ok((head, contexts))
}

/// `L*` at the configured memory and the per-context optimal actions.
pub fn oracle(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let process = cfg.build_process()?;
    let p = markov(&process)
        .ok_or_else(|| ConfigError::new(None, "process.kind", "the exact oracle needs a Markov process"))?;
    let o = optimal_risk(p, &cfg.loss_fn(), cfg.memory())?;
    let (head, contexts) = write_oracle_tables(&o, out)?;
    Ok(format!("{head}\n{contexts}"))
}

/// Command-line overrides for `bounds`.
#[derive(Debug, Clone, Default)]
pub struct BoundsOverrides {
    pub horizons: Vec<usize>,
    pub epsilon: Option<f64>,
    pub budget: Option<f64>,
    pub m: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub blocked: bool,
}

pub const BOUNDS_HEADER: &str = "T,mu,a,beta_a,beta_a_minus_d,D,tail";

/// Tail-bound table over the configured horizons. Without a config the
/// defaults apply and no mixing coefficients are reported.
pub fn bounds(cfg: Option<&ExperimentConfig>, over: &BoundsOverrides, out: &Path) -> Result<String> {
    let spec = cfg.map_or_else(BoundsSpec::default, |c| c.bounds.clone());
    let (memory, dim) = cfg.map_or((1, 1), |c| (c.memory(), c.dim()));
    let process = cfg.map(ExperimentConfig::build_process).transpose()?;
    let inputs = BoundInputs {
        epsilon: over.epsilon.unwrap_or(spec.epsilon),
        budget: over.budget.unwrap_or(spec.budget),
        m: over.m.or(spec.m).unwrap_or(dim * memory),
        c1: over.c1.unwrap_or(spec.c1),
        c2: over.c2.unwrap_or(spec.c2),
        memory,
        blocked: over.blocked || spec.blocked,
    };
    let horizons = if over.horizons.is_empty() { spec.horizons } else { over.horizons.clone() };
    let chain = process.as_ref().and_then(markov);
    let opt = |v: Option<f64>| v.map_or(String::new(), |b| format!("{b:e}"));
    let mut text = format!("{BOUNDS_HEADER}\n");
    for t in horizons {
        let b = blocked_bound(t, &inputs, chain)?;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{:e}",
            t,
            b.mu,
            b.a,
            opt(b.beta_a),
            opt(b.beta_a_minus_d),
            b.d_value,
            b.tail
        );
    }
    write(&out.join("bounds.csv"), &text)?;
    Ok(text)
}

pub const PARTITION_HEADER: &str = "block,kind,start,end";

/// Block partition at the configured horizon and, on Markov sources, the
/// block decomposition experiment with a random Lipschitz witness family.
pub fn blocks(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let horizon = cfg.blocks.horizon.unwrap_or(cfg.horizon);
    let (mu, a) = default_block_counts(horizon)?;
    let p = block_partition(horizon, mu, a)?;
    let mut table = format!("{PARTITION_HEADER}\n");
    for (is_h, j, b) in p.blocks_in_order() {
        let _ = writeln!(table, "{},{},{},{}", j, if is_h { "H" } else { "T" }, b.start(), b.end());
    }
    if let Some(r) = &p.remainder {
        let _ = writeln!(table, "-,R,{},{}", r.start(), r.end());
    }
    write(&out.join("partition.csv"), &table)?;
    let mut text = format!("T = {horizon}, mu = {mu}, a = {a}\n{table}");

    let process = cfg.build_process()?;
    let Some(chain) = markov(&process) else {
        text.push_str("\nblock decomposition check skipped: needs a Markov process\n");
        return Ok(text);
    };
    if cfg.dim() != 1 {
        return Err(ConfigError::new(None, "blocks", "the witness family is scalar; needs n = 1").into());
    }
    if cfg.blocks.functions == 0 || cfg.blocks.seeds == 0 {
        return Err(ConfigError::new(None, "blocks", "functions and seeds must be positive").into());
    }
    let memory = cfg.memory();
    let base = cfg.seeds[0];
    let mut r = rng::seeded(base);
    let family: Vec<LipschitzFn> = (0..cfg.blocks.functions)
        .map(|_| random_lipschitz_fn(&mut r, memory, 12, cfg.strategy.l0))
        .collect::<std::result::Result<_, _>>()?;
    let setup = YuSetup {
        process: chain,
        functions: &family,
        loss: cfg.loss_fn(),
        memory,
        horizon,
        epsilon: cfg.blocks.epsilon,
    };
    let expected = setup.expected()?;
    let seeds: Vec<u64> = (0..cfg.blocks.seeds as u64).map(|i| base.wrapping_add(i)).collect();
    let outcomes: Vec<YuSeedOutcome> =
        seeds.par_iter().map(|&s| setup.run_seed(s, &expected)).collect::<std::result::Result<_, _>>()?;
    let check = setup.summarize(&outcomes)?;

    let mut per_seed = String::from("seed,original_deviation,blocked_deviation\n");
    for o in &outcomes {
        let _ = writeln!(per_seed, "{},{},{}", o.seed, o.original_deviation, o.blocked_deviation);
    }
    let summary = format!(
        "mu,a,epsilon,lhs_freq,blocked_freq,coupling,rhs,std_error,holds\n{},{},{},{},{},{},{},{},{}\n",
        check.mu,
        check.a,
        cfg.blocks.epsilon,
        check.lhs_freq,
        check.blocked_freq,
        check.coupling,
        check.rhs,
        check.std_error,
        check.holds
    );
    write(&out.join("deviations.csv"), &per_seed)?;
    write(&out.join("decomposition.csv"), &summary)?;
    let _ = write!(text, "\n{summary}");
    Ok(text)
}
