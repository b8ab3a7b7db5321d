//! Experiment runner for the `killsens` estimators: TOML configs in, CSV
//! tables and a JSON manifest out.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, write_artifacts, CliError, Command, Outcome};
pub use config::{parse_config, ConfigError, OracleKind, RunConfig};
