use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: malformed input at byte offset {offset}: {message}")]
    Parse {
        what: &'static str,
        offset: usize,
        message: String,
    },
    #[error("image file declares {images} items but label file declares {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("checkpoint length mismatch: manifest describes {expected} blob bytes, file holds {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] duet_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type LabResult<T> = std::result::Result<T, LabError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
    let path = path.into();
    move |source| LabError::Io { path, source }
}

pub(crate) fn parse_err(what: &'static str, offset: usize, message: impl Into<String>) -> LabError {
    LabError::Parse {
        what,
        offset,
        message: message.into(),
    }
}
