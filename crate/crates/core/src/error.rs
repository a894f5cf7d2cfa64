use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tensor extents, channel counts or layer shapes do not compose.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index (degree, operand, frame, coordinate) is out of range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Malformed textual or binary input.
    #[error("parse error: {0}")]
    Parse(String),

    /// The operation is well-formed but not supported by this engine.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
