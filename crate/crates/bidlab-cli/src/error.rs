//! Exit-code-aware error wrapper for the command layer.

use std::fmt;

/// Validation failures (bad flags, configs, or input files) exit with 1;
/// failures during the operation itself exit with 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

/// Tag an error from the input-loading phase.
pub fn validation(err: impl fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

/// Tag an error from the execution phase.
pub fn runtime(err: impl fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
