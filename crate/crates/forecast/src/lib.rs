//! Trajectory forecasting under distribution shift: sliding-window data,
//! the modular forecaster, invariance and contrastive objectives, staged
//! training, low-shot adaptation, test-time refinement and the evaluation
//! suites.

pub mod adapt;
pub mod config;
pub mod dataio;
mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod report;
pub mod suites;
pub mod trainer;

pub use config::{ExperimentConfig, Scale};
pub use error::{Error, Result};
pub use model::{Architecture, Bound, Group, ModularModel};
pub use report::{EvalReport, EvalRow};
