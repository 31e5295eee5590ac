//! Library side of the `pimp` command: config files, presets, on-disk
//! artifacts and the subcommands, so tests and other tools can drive them
//! without spawning a process.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod presets;

pub use commands::{cmd_batch, cmd_compare, cmd_report, cmd_run, execute_run, run_batch, Source};
pub use error::CliError;
