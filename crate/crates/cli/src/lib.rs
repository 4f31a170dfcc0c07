//! Command-line front end: vocabulary building, training, export,
//! nearest-neighbour queries, document classification and synthetic data.

pub mod commands;
pub mod error;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
