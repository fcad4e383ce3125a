use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value passed to {0}")]
    NonFinite(&'static str),
    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Invalid { op, detail: detail.into() }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
