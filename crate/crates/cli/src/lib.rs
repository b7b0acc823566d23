//! The `tcf` command line and its HTTP service.

#![allow(clippy::result_large_err)]

pub mod commands;
pub mod http;

pub use commands::{run, Cli};
