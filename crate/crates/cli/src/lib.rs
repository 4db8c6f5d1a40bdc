//! Batch front-end: configuration, subcommands and report formatting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod model;

pub use config::RunConfig;
pub use error::CliError;
