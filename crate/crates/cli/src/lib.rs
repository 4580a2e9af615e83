//! Command implementations behind the `finfuse` binary.

pub mod commands;
pub mod config;
pub mod demo;
pub mod manifest;

pub use commands::{cmd_backtest, cmd_eval, cmd_fuse, cmd_infer, cmd_report, cmd_run, Outcome, EXIT_FAILURE};
pub use config::{Overrides, RunConfig};
