//! Command-line front end of `segmicro`: experiment configuration files and
//! the `gen-data`, `augment`, `train`, `evaluate`, `predict`, `params` and
//! `gradcheck` commands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, SCHEMA};
pub use error::{CliError, CliResult};
