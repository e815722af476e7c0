use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense materialization capped at {cap} qubits, got {qubits}")]
    SizeCap { qubits: usize, cap: usize },

    #[error("matrix is not Hermitian (max |S - S^H| = {0:e})")]
    NotHermitian(f64),

    #[error("expectation {0} outside [-1, 1]; target state is not normalized")]
    Unnormalized(f64),

    #[error("incomplete Pauli basis: {0}")]
    IncompleteBasis(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
