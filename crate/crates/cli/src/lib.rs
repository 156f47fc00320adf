//! Command-line front end for the qscm toolkit: run configuration, file
//! formats and the `qscm` subcommands.
//!
//! Exit codes: 0 success, 1 pipeline failure (e.g. a fit that cannot run),
//! 2 invalid configuration or usage, 3 I/O error, 4 malformed input file,
//! 5 inputs that do not belong together (protocol or acquisition mismatch).

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

pub use error::{CliError, CliResult, FormatError};
