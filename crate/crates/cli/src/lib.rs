//! Experiment harness around `latgas-core`: TOML-configured runs with
//! deterministic, config-hash-keyed output bundles.
//!
//! The binary (`latgas`) exposes one subcommand per experiment; this
//! library holds the config schema ([`config`]) and the experiment runners
//! ([`experiments`]) so integration tests can drive them in process.
//!
//! Exit-code contract: `0` all checks passed, `1` a quantitative check
//! failed (tolerance breach, order violation, numeric overflow), `2`
//! configuration or environment error.

use std::fmt;
use std::io;

pub mod config;
pub mod experiments;
pub mod report;

/// Harness-level error: separates "the run is wrong" from "the setup is
/// wrong" so the binary can map them to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration: unparseable, inconsistent, or out-of-range input.
    Config(String),
    /// Environment failure (filesystem, threads).
    Io(io::Error),
    /// Failure inside a run: numeric guard or coupling-order violation.
    Run(latgas_core::error::Error),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Run(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<latgas_core::error::Error> for CliError {
    fn from(e: latgas_core::error::Error) -> Self {
        CliError::Run(e)
    }
}

/// Shorthand result for harness operations.
pub type Result<T> = std::result::Result<T, CliError>;
