//! Front end for `linmm`: config loading, the `simulate`, `figures` and
//! `sweep` commands, and atomic output writing.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Cli, Command, Figure, Status};
pub use config::{LoadedConfig, RunConfig};
