use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown class {class_id} (label map has {num_classes} classes)")]
    UnknownClass { class_id: u32, num_classes: u32 },
    #[error("empty mask")]
    EmptyMask,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty eval set")]
    EmptyEvalSet,
    #[error("empty input")]
    EmptyInput,
    #[error("class absent")]
    ClassAbsent,
    #[error("no promptable frame")]
    NoPromptableFrame,
    #[error("unprompted object (class {0})")]
    UnpromptedObject(u32),
    #[error("frame {index} out of range (case has {count} frames)")]
    FrameOutOfRange { index: usize, count: usize },
    #[error("session closed")]
    SessionClosed,
    #[error("segmenter launch failed: {0}")]
    Launch(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("segmenter reported error: {0}")]
    Segmenter(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
