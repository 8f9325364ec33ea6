use crate::tensor::Shape;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: invalid shape {shape}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Shape,
        reason: String,
    },
    #[error("{op}: output would be empty ({reason})")]
    EmptyOutput { op: &'static str, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot fuse: {0}")]
    Unfusible(String),
    #[error("codec unavailable: {0}")]
    CodecUnavailable(String),
    #[error("codec failed: {0}")]
    Codec(String),
}

impl Error {
    pub fn invalid(op: &'static str, shape: Shape, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            shape,
            reason: reason.into(),
        }
    }
}
