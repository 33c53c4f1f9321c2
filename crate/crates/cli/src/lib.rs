//! Command-line front end: kernel/modes file formats, synthetic kernel
//! generation and the `gen`, `convert`, `verify`, `parity` and `bench`
//! subcommands.

pub mod commands;
pub mod error;
pub mod formats;
pub mod generate;

pub use error::{CliError, Result};
