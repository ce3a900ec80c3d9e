//! Multi-fidelity Bayesian optimisation of neural-network hyperparameters for
//! radio localisation.
//!
//! The crate is organised bottom-up:
//!
//! - [`gp`]: exact Gaussian-process regression with an ARD squared-exponential
//!   kernel and maximum-likelihood fitting.
//! - [`acquisition`]: incumbent tracking, expected improvement and proposal of
//!   the next configuration.
//! - [`space`]: mixed continuous/integer/categorical search spaces and their
//!   unit-cube encoding.
//! - [`fidelity`]: epoch budgets and the median stopping rule.
//! - [`tuner`]: the asynchronous BO loop, the random-search baseline and
//!   tuning curves.
//! - [`mlp`]: a two-hidden-layer regression network trained with SGD.
//! - [`features`]: PCA ranking and feature scaling.
//! - [`data`]: synthetic indoor-localisation scenarios, CSV I/O and splits.
//! - [`objective`]: glue turning a dataset into a tunable objective.
//! - [`experiment`]: configuration, run directories and comparison reports
//!   used by the `boloc` binary.

pub mod acquisition;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fidelity;
pub mod gp;
pub mod mlp;
pub mod objective;
pub mod rng;
pub mod space;
pub mod tuner;

pub use error::{Error, Result};
