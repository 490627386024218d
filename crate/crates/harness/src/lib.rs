//! Configuration, experiment runners, reports and the `rsbm` command line
//! on top of `rsbm-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, HarnessResult};
pub use experiments::{run_experiment, RunOutcome};
