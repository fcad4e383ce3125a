use gwtrack_data::DataError;
use gwtrack_tensor::{CheckpointError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("checkpoint does not match the model architecture: {0}")]
    Architecture(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
