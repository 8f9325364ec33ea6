use thiserror::Error;

pub type Result<T, E = ZooError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("layer {index}: {reason}")]
    Layer { index: usize, reason: String },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("model {0:?} is already registered")]
    Duplicate(String),
    #[error("operation needs a {expected} graph")]
    Mode { expected: &'static str },
    #[error("no parameter named {0:?}")]
    UnknownParam(String),
    #[error(transparent)]
    Core(#[from] rtsr_core::Error),
}

impl ZooError {
    pub(crate) fn layer(index: usize, reason: impl Into<String>) -> Self {
        ZooError::Layer {
            index,
            reason: reason.into(),
        }
    }
}
