use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the training framework.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range, or inconsistent.
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    /// A tensor does not have the shape an operation requires.
    #[error("shape mismatch for {tensor}: expected {expected}, found {found}")]
    Shape {
        tensor: String,
        expected: String,
        found: String,
    },

    /// A required file or directory does not exist.
    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },

    /// A dataset split does not contain the expected number of samples.
    #[error("dataset `{dataset}` split `{split}` has {found} samples, expected {expected}")]
    SizeMismatch {
        dataset: String,
        split: String,
        expected: usize,
        found: usize,
    },

    /// Malformed file contents.
    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    /// A computation produced a non-finite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Invalid argument to an operation.
    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(
        tensor: impl Into<String>,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            tensor: tensor.into(),
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// True for errors caused by user configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
