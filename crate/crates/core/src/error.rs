//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing corpus file: {0}")]
    MissingCorpusFile(PathBuf),

    #[error("{file}:{line}: invalid record: {reason}")]
    InvalidRecord {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("failed to decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("augmentation failed for record {id}: {reason}")]
    AugmentationFailed { id: String, reason: String },

    #[error("MOS {0} is outside [1, 5]")]
    OutOfRange(f64),

    #[error("label {label:?} is not part of the {levels}-level scale")]
    UnknownLabel { label: String, levels: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
