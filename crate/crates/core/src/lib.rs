//! Lipschitz-constrained online prediction on stationary, β-mixing sources.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: finite-order Markov sources with exact stationary laws and
//! mixing coefficients, the exact optimal long-run risk for those sources,
//! Lipschitz-constrained empirical risk minimizers (an envelope regressor and
//! a spectrally normalized MLP), the independent-block machinery used to
//! analyse dependent samples, and the online prediction loop that ties them
//! together. File formats, configuration and the command line live in the
//! `ergolip` crate.
//!
//! ```
//! use ergolip_core::processes::MarkovProcess;
//! use ergolip_core::oracle::{optimal_risk, LossFn};
//!
//! let chain = MarkovProcess::two_state(0.9, 0.9).unwrap();
//! let risk = optimal_risk(&chain, &LossFn::squared(), 1).unwrap();
//! assert!((risk.value - 0.045).abs() < 1e-12);
//! ```
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blocking;
pub mod harness;
pub mod lipschitz;
pub mod matrix;
pub mod oracle;
pub mod predictor;
pub mod processes;
pub mod rng;

pub use matrix::Matrix;
pub use predictor::Predictor;
