use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("domain `{domain}` has {available} patches but {requested} were requested")]
    InsufficientPatches {
        domain: String,
        available: usize,
        requested: usize,
    },

    #[error("checkpoint incompatible: {0}")]
    CheckpointVersion(String),

    #[error("non-finite loss `{term}` at global step {step} (batch {batch_index})")]
    NonFinite {
        term: String,
        step: u64,
        batch_index: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
