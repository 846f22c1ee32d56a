use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two grids (or two lists) that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("zero-norm embedding for text {text:?}")]
    ZeroNorm { text: String },

    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing image files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingImages(Vec<PathBuf>),

    #[error("record {id}: {message}")]
    Record { id: String, message: String },

    #[error("non-finite loss at step {step} (samples: {})", .sample_ids.join(", "))]
    NonFiniteLoss { step: u64, sample_ids: Vec<String> },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("image codec error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the command line as `ERROR:<code>:`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidValue(_) => "value",
            Error::ZeroNorm { .. } => "embedding",
            Error::Transport { .. } => "transport",
            Error::Protocol { .. } => "protocol",
            Error::Config(_) => "config",
            Error::MissingImages(_) => "data",
            Error::Record { .. } => "data",
            Error::NonFiniteLoss { .. } => "nonfinite",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
