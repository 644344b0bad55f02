//! Configuration-driven runner for the driven ladder experiment: DOS and
//! inverse temperature, filtered initial state, field protocol at several
//! rates, work statistics and finite-size scans.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{Pipeline, WorkSummary};
