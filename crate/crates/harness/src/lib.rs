//! Experiment orchestration, configuration and reporting for `dphr-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod plot;
pub mod schedule;
pub mod stats;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_experiment_with, RunOutcome, RunStatus, Summary};
pub use schedule::schedule_trace;
