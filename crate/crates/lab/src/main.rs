use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergolip::commands::{self, BoundsOverrides};
use ergolip::{ConfigError, ExperimentConfig, LabError};

/// Online prediction on mixing Markov sources with Lipschitz-constrained
/// empirical risk minimization.
#[derive(Parser)]
#[command(name = "ergolip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seed list with this one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `run.out` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one trajectory file per seed.
    Simulate(Common),
    /// Run the strategies on every seed and write metrics and the report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the full per-round loss log.
        #[arg(long)]
        per_step: bool,
    },
    /// Exact optimal risk `L*` and per-context optimal actions.
    Oracle(Common),
    /// Concentration bound table.
    Bounds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Horizon; repeat for several rows.
        #[arg(long = "horizon")]
        horizons: Vec<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        c2: Option<f64>,
        /// Apply the bound to the independent blocks.
        #[arg(long)]
        blocked: bool,
    },
    /// Block partition and block decomposition check.
    Blocks(Common),
    /// Rebuild summary, curve and chart from existing metrics files.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), LabError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    Ok((cfg, out))
}

fn out_dir(config: Option<&Path>, out: Option<PathBuf>) -> Result<(Option<ExperimentConfig>, PathBuf), LabError> {
    let cfg = config.map(ExperimentConfig::load).transpose()?;
    let out = out.or_else(|| cfg.as_ref().map(|c| PathBuf::from(&c.out)));
    Ok((cfg, out.unwrap_or_else(|| PathBuf::from("out"))))
}

fn dispatch(command: Command) -> Result<String, LabError> {
    match command {
        Command::Simulate(common) => {
            let (cfg, out) = load(&common)?;
            let files = commands::simulate(&cfg, &out)?;
            Ok(files.iter().map(|f| format!("{}\n", f.display())).collect())
        }
        Command::Run { common, per_step } => {
            let (cfg, out) = load(&common)?;
            commands::run(&cfg, &out, per_step)
        }
        Command::Oracle(common) => {
            let (cfg, out) = load(&common)?;
            commands::oracle(&cfg, &out)
        }
        Command::Bounds { config, out, horizons, epsilon, budget, m, c1, c2, blocked } => {
            let (cfg, out) = out_dir(config.as_deref(), out)?;
            let over = BoundsOverrides { horizons, epsilon, budget, m, c1, c2, blocked };
            commands::bounds(cfg.as_ref(), &over, &out)
        }
        Command::Blocks(common) => {
            let (cfg, out) = load(&common)?;
            commands::blocks(&cfg, &out)
        }
        Command::Report { config, out } => {
            let (_, out) = out_dir(config.as_deref(), out)?;
            if !out.is_dir() {
                return Err(ConfigError::new(None, "run.out", format!("{} is not a directory", out.display())).into());
            }
            commands::report(&out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
