use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not fit the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A network spec whose channel arithmetic or placement mask is inconsistent.
    #[error("construction error at {layer}: {reason}")]
    Construction { layer: String, reason: String },

    #[error("input error: {0}")]
    Input(String),

    /// Non-finite loss or gradient during optimization.
    #[error("training error: {0}")]
    Training(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config digest mismatch: checkpoint has {stored}, config has {expected}")]
    DigestMismatch { stored: String, expected: String },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
