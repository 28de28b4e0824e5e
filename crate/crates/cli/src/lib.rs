//! Library side of the `wrht` command-line tool: CSV and JSON formats, run
//! configuration and the command implementations.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use cli::{run, Cli};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
