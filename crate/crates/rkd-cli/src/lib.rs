//! Library side of the command line front end: config loading with
//! overrides, subcommand bodies, and report summarization. The `rkd`
//! binary is a thin argument-parsing shell over these.

pub mod commands;
pub mod config_load;
pub mod error;
pub mod summarize;

pub use config_load::{parse_config, render_resolved, LoadedConfig};
pub use error::{CliError, CliResult};
