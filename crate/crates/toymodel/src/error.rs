use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no training cases")]
    EmptyDataset,

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] medseg_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ToyError> for medseg_core::Error {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::Core(inner) => inner,
            other => medseg_core::Error::Segmenter(other.to_string()),
        }
    }
}

pub type Result<T, E = ToyError> = std::result::Result<T, E>;
