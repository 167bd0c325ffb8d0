//! File formats and command implementations behind the `vlrisk` binary.
//!
//! Everything numeric lives in `vlrisk-core`; this crate only moves
//! bytes: JSONL cohorts (gzip by extension), binary checkpoints with a
//! JSON manifest, deterministic CSV metric logs, and the five
//! subcommands.

pub mod commands;
pub mod io;

/// Process outcome: `Usage` maps to exit code 2 (bad invocation,
/// unreadable config or inputs), `Check` to exit code 1 (a verification
/// or training-time failure).
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Check(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(e) | CliError::Check(e) => format!("{e:#}"),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub(crate) fn usage<T>(err: impl Into<anyhow::Error>) -> CliResult<T> {
    Err(CliError::Usage(err.into()))
}

pub(crate) fn check<T>(err: impl Into<anyhow::Error>) -> CliResult<T> {
    Err(CliError::Check(err.into()))
}
