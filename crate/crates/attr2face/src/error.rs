use std::path::PathBuf;

/// Errors raised by the IO, training-driver and service layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] attr2face_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("missing attributes for {0}")]
    MissingAttributes(PathBuf),
    #[error("missing split assignment for {0}")]
    MissingSplit(PathBuf),
    #[error("{path}: malformed attribute value `{value}` in column `{column}`")]
    MalformedAttribute { path: PathBuf, column: String, value: String },
    #[error("config hash mismatch: checkpoint was written by {expected}, current config hashes to {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("training aborted at step {step}: {reason} (snapshot: {snapshot})")]
    Aborted { step: u64, reason: String, snapshot: PathBuf },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, message: impl Into<String>) -> Error {
    Error::Format { path: path.into(), message: message.into() }
}
