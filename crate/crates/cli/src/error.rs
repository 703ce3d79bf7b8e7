//! Error classes of the command-line tool and their exit codes.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad configuration or parameters (exit code 1).
    Validation(String),
    /// A numerical procedure failed (exit code 2).
    Numerical(String),
    /// Reading or writing files failed (exit code 3).
    Io(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<goldenrate::Error> for CliError {
    fn from(e: goldenrate::Error) -> Self {
        match e {
            goldenrate::Error::Model(_) | goldenrate::Error::Validation(_) => CliError::Validation(e.to_string()),
            goldenrate::Error::NonFinite { .. } | goldenrate::Error::NotConverged { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
