//! Command-line harness for `gradfaith`: generate or ingest a dataset,
//! train seeded models, export Grad-CAM heatmaps and overlays, audit
//! checkpoints into a report, and run the self-verification suites.
//!
//! Every command first writes a run manifest (`key=value` lines holding the
//! command, every resolved option, the planned outputs and timestamps);
//! `gradfaith replay <manifest>` re-runs it.
//!
//! Exit codes: 0 success, 1 verification or metric failure, 2 usage error,
//! 3 I/O or format error.

pub mod cli;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod render;
pub mod report;
pub mod splitfile;
pub mod verify;

pub use error::{CliError, CliResult};

/// Runs a parsed command line.
pub fn run(cli: cli::Cli) -> CliResult<()> {
    commands::run(cli.command)
}
