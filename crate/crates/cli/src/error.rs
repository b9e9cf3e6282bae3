//! Command-line error type with stable exit codes.

use std::path::PathBuf;
use thiserror::Error;

/// Exit code for usage errors (bad flags or flag combinations).
pub const EXIT_USAGE: u8 = 2;
/// Exit code for data errors (unreadable or malformed input files).
pub const EXIT_DATA: u8 = 3;
/// Exit code for model errors (the computation itself failed).
pub const EXIT_MODEL: u8 = 4;

/// Anything that can stop a command, categorized for the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A cell failed to parse as a finite number. Row and column are
    /// 1-based data positions (the header row is not counted).
    #[error("{path}: row {row}, column {col}: cannot parse {token:?} as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        token: String,
    },
    /// A row had the wrong number of fields.
    #[error("{path}: row {row}: expected {expected} fields, found {found}")]
    Ragged {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    /// The file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// The parsed file does not form a usable dataset.
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        source: mipca::Error,
    },
    /// The computation rejected its inputs or failed numerically.
    #[error(transparent)]
    Model(#[from] mipca::Error),
    /// Invalid flags or flag combinations.
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// The documented exit code of this error category.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. }
            | CliError::Ragged { .. }
            | CliError::Io { .. }
            | CliError::Data { .. } => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }

    /// A usage error with the given message.
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

/// Shorthand for command results.
pub type Result<T> = std::result::Result<T, CliError>;
