use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("validation error at row {row}, column {column:?}: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("classifier capability missing: {0}")]
    Capability(String),

    #[error("normal training set contaminated: record {id} carries a positive label")]
    Contamination { id: String },

    #[error("non-finite value in {0}")]
    Numeric(&'static str),

    #[error("knowledge backend error: {0}")]
    Backend(String),

    #[error("failed to parse backend reply: {message}; raw reply: {raw}")]
    Parse { message: String, raw: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }
}
