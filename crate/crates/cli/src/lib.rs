//! Command-line front-end for `jumpmil`: config handling and the experiment subcommands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_check, cmd_constants, cmd_converge, cmd_mesh, cmd_pilot, cmd_simulate, load_config, with_threads, CliError,
    CliResult,
};
pub use config::{ConfigError, FileConfig, RunConfig};
