use thiserror::Error;

/// Errors raised by the identification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
