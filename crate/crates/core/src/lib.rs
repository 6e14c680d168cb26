//! k-decay learning-rate schedules with a deterministic training and sweep
//! harness for studying them at desk scale.
//!
//! - [`schedule`]: the k-decay families, baselines, and derivative tools.
//! - [`harness`]: synthetic data, a small MLP, SGD with momentum, training.
//! - [`experiment`]: resumable k-sweeps, loss ordering, best-k selection.
//! - [`config`] and [`report`]: TOML inputs and CSV / JSON-lines outputs.
//! - [`check`]: the invariant suite behind `kdecay check`.

pub mod check;
pub mod config;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod report;
pub mod schedule;

pub use error::{Error, Result};
