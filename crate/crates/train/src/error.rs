use thiserror::Error;

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("tape: {0}")]
    Tape(String),
    #[error("loss: {0}")]
    Loss(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("invalid stage plan: {0}")]
    Plan(String),
    #[error("unknown teacher model {0:?}")]
    UnknownTeacher(String),
    #[error("data source: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] rtsr_core::Error),
    #[error(transparent)]
    Zoo(#[from] rtsr_zoo::ZooError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
