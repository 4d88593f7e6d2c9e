//! Experiment runner behind the `cryda` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
