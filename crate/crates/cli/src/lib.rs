//! Command-line front end for `dclust-core`: data generation, pre-training,
//! clustering, evaluation, embedding export, and gradient checking.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitCode};
