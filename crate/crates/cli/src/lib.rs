//! Library backing the `qres` binary: configuration parsing, file formats,
//! and command implementations, separated so integration tests can drive
//! them directly.

pub mod commands;
pub mod config;
pub mod format;

/// Failures surfaced to the shell. The variants map one-to-one onto exit
/// codes: bad or unparseable configuration is 2, a structurally valid
/// configuration that violates a model constraint is 3, and unreadable or
/// malformed data files are 4.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("constraint: {0}")]
    Constraint(String),
    #[error("data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Constraint(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
