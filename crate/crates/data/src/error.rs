use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("guidewire path leaves the vessel lumen at ({x:.1}, {y:.1})")]
    PathOutsideLumen { x: f64, y: f64 },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("missing meta file {0}")]
    MissingMeta(PathBuf),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}
