use std::path::PathBuf;

use gwtrack_core::error::CoreError;
use gwtrack_data::{DataError, DegenerateBox};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Degenerate(#[from] DegenerateBox),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("pixel spacing {0} mm/px must be positive and finite")]
    Spacing(f64),
    #[error("results for {sequence} do not align with its annotations: missing frames {missing:?}, unexpected frames {extra:?}")]
    Alignment { sequence: String, missing: Vec<usize>, extra: Vec<usize> },
    #[error("no dataset sequence named {0}")]
    UnknownSequence(String),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EvalError {
        let path = path.into();
        move |source| EvalError::Io { path, source }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
