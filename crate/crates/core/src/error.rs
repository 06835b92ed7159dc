use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("format error at byte {offset} in {path}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("checkpoint role mismatch: expected {expected}, found {found}")]
    RoleMismatch { expected: String, found: String },

    #[error("checkpoint tensor `{name}` invalid: {reason}")]
    Tensor { name: String, reason: String },

    #[error("non-finite gradient in tensor `{tensor}` at step {step}")]
    NonFinite { tensor: String, step: u64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("subject mismatch: {0}")]
    SubjectMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by the command-line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::Serde(_) => ErrorKind::Usage,
            Error::NonFinite { .. } => ErrorKind::TrainingAbort,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    TrainingAbort,
}
