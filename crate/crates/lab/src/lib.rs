//! Experiment runner for `ergolip-core`: configuration files, trajectory and
//! metrics formats, SVG reports and the command implementations behind the
//! `ergolip` binary.

pub mod chart;
pub mod commands;
pub mod config;
pub mod formats;

use std::path::PathBuf;

use ergolip_core::blocking::BlockError;
use ergolip_core::harness::HarnessError;
use ergolip_core::lipschitz::FitError;
use ergolip_core::oracle::OracleError;
use ergolip_core::processes::ProcessError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// 2 for anything the user can fix in their inputs, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

impl From<ProcessError> for LabError {
    fn from(e: ProcessError) -> Self {
        match e {
            ProcessError::NoConvergence { .. } => LabError::Numeric(e.to_string()),
            other => ConfigError::new(None, "process", other.to_string()).into(),
        }
    }
}

impl From<FitError> for LabError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidBudget(_) => ConfigError::new(None, "strategy", e.to_string()).into(),
            other => LabError::Numeric(other.to_string()),
        }
    }
}

impl From<OracleError> for LabError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Process(p) => p.into(),
            OracleError::ContextExplosion { .. } => ConfigError::new(None, "strategy.memory", e.to_string()).into(),
            other => ConfigError::new(None, "loss", other.to_string()).into(),
        }
    }
}

impl From<HarnessError> for LabError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Fit(f) => f.into(),
            HarnessError::Oracle(o) => o.into(),
            HarnessError::TooShort { .. } => ConfigError::new(None, "run.horizon", e.to_string()).into(),
            other => LabError::Numeric(other.to_string()),
        }
    }
}

impl From<BlockError> for LabError {
    fn from(e: BlockError) -> Self {
        match e {
            BlockError::Process(p) => p.into(),
            BlockError::Oracle(o) => o.into(),
            other => ConfigError::new(None, "blocks", other.to_string()).into(),
        }
    }
}
