use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad magic: expected \"RTSR\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported weight-file version {major}.{minor}")]
    UnsupportedVersion { major: u16, minor: u16 },
    #[error("truncated weight file: {0}")]
    Truncated(String),
    #[error("malformed tensor manifest: {0}")]
    Manifest(String),
    #[error("weights do not match the model spec: {0}")]
    SpecMismatch(String),
    #[error("codec unavailable: probed `{probe}`: {reason}")]
    CodecUnavailable { probe: String, reason: String },
    #[error("codec command failed for {input}: {reason}")]
    CodecFailed { input: PathBuf, reason: String },
    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("data: {0}")]
    Data(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] rtsr_core::Error),
    #[error(transparent)]
    Zoo(#[from] rtsr_zoo::ZooError),
    #[error(transparent)]
    Train(#[from] rtsr_train::TrainError),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 codec unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 1,
            BenchError::CodecUnavailable { .. } => 3,
            _ => 2,
        }
    }
}
