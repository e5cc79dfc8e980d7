use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward needs a scalar root, got shape {0}")]
    NonScalarRoot(Shape),

    #[error("backward already ran on this graph; reset gradients before running it again")]
    BackwardAlreadyRan,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: cannot decode image: {detail}", path.display())]
    Decode { path: PathBuf, detail: String },

    #[error("{}: unsupported color type {color}", path.display())]
    UnsupportedColor { path: PathBuf, color: String },

    #[error("{}: cannot encode image: {detail}", path.display())]
    Encode { path: PathBuf, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
