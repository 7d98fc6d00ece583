//! Crate-wide error type and result alias.
//!
//! Errors are grouped by how a command-line run should react to them:
//! everything user-facing (bad config, unreadable data, shape mismatches)
//! maps to exit code 2, while internal numeric failures (non-finite loss,
//! divergence) map to exit code 1.

use thiserror::Error;

/// All failures surfaced by this crate.
#[derive(Debug, Error)]
pub enum FcError {
    /// Invalid or inconsistent run configuration (unknown key, bad value,
    /// violated constraint).
    #[error("config: {0}")]
    Config(String),

    /// A malformed input file; `line` is 1-based and includes the header.
    #[error("parse: line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Filesystem failure, annotated with the path involved.
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Data that cannot support the requested operation (constant series,
    /// too few samples, empty split).
    #[error("data: {0}")]
    Data(String),

    /// A shape/contract violation between configured dimensions and actual
    /// inputs (for example a checkpoint trained for a different window).
    #[error("shape: {0}")]
    Shape(String),

    /// Internal numeric failure: non-finite values where finite ones are
    /// required.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Unreadable or inconsistent checkpoint contents.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl FcError {
    /// Process exit code for command-line runs: 1 for internal numeric
    /// failures, 2 for input/config errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            FcError::Numeric(_) => 1,
            _ => 2,
        }
    }

    /// Short machine-parseable category tag (the prefix of `Display`).
    pub fn kind(&self) -> &'static str {
        match self {
            FcError::Config(_) => "config",
            FcError::Parse { .. } => "parse",
            FcError::Io { .. } => "io",
            FcError::Data(_) => "data",
            FcError::Shape(_) => "shape",
            FcError::Numeric(_) => "numeric",
            FcError::Checkpoint(_) => "checkpoint",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FcError>;

/// Helper for annotating I/O errors with the offending path.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> FcError {
    FcError::Io {
        path: path.display().to_string(),
        source,
    }
}
