//! Command-line runner for trajectory contrastive meta-RL.
//!
//! Builds on the `tcl-core` algorithms with everything that needs `std`:
//! configuration files, run directories, checkpoints, CSV outputs and a
//! rayon executor for parallel collection. The `tcl` binary exposes the
//! subcommands in [`cmd`].

pub mod cmd;
pub mod config;
mod error;
pub mod exec;
pub mod io;
pub mod manifest;

pub use error::{CliError, Result};
