use thiserror::Error;

/// Errors produced by the codec, the analyzers and the file formats.
#[derive(Debug, Error)]
pub enum HqmqError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A zero-norm chunk has no direction.
    #[error("degenerate chunk: zero norm has no direction")]
    DegenerateChunk,

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HqmqError>;

pub(crate) fn invalid(msg: impl Into<String>) -> HqmqError {
    HqmqError::InvalidArgument(msg.into())
}
