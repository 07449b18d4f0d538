//! Process-level error classification.
//!
//! Every failure is either a usage/configuration problem (the invocation
//! itself was wrong: exit code 2) or a runtime failure (the invocation was
//! well-formed but could not be carried out: exit code 1).

use std::fmt;

/// Exit code for runtime failures.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// The command line or configuration was invalid (exit code 2).
    Usage(String),
    /// The work itself failed: I/O, bad input data, training error (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

/// Library errors surfacing after configuration was accepted are runtime
/// failures; configuration-time validation wraps them into `Usage` itself.
impl From<dsrl_core::Error> for CliError {
    fn from(err: dsrl_core::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
