//! Command-line front end for `menet-core`: run configuration, weight
//! archives, dataset files and the `menet` subcommands.

pub mod archive;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
mod io;

pub use archive::{Dtype, WeightArchive};
pub use cli::Cli;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
