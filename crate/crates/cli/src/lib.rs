//! Command implementations behind the `msms` binary.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;

/// Command failure, mapped to the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Invalid configuration or input data; exit code 2.
    Config(String),
    /// Numerical failure inside the tracker; exit code 3.
    Numerical(String),
    /// File system failure; exit code 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<msms_core::Error> for CliError {
    fn from(e: msms_core::Error) -> Self {
        use msms_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Numerical(m) => CliError::Numerical(m),
            E::Invariant(_) => CliError::Numerical(e.to_string()),
            E::Contract(_) | E::Index { .. } | E::StateSpaceOverflow { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}
