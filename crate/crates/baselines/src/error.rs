use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NotPsd(String),
    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("singular innovation covariance")]
    SingularInnovation,
    #[error("invalid filter configuration: {0}")]
    Config(String),
}
