//! IO, file formats and command implementations for the avasr workspace.
//!
//! The numeric core lives in `avasr-core`; this crate adds everything that
//! touches the filesystem: the experiment config format, corpus and
//! checkpoint files, metrics logs, evaluation reports and the `avasr`
//! binary's subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpusio;
pub mod error;
pub mod metrics;
pub mod tensorfile;
pub mod wire;

pub use error::{CliError, Result};
