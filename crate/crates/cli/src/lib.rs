//! Experiment pipeline behind the `sedconc` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiment::Experiment;
