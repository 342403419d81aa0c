use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix does not preserve the Minkowski form (defect {0:e})")]
    NotLorentz(f64),

    #[error("singular construction: {0}")]
    Singular(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("field evaluation failed at {point}: {reason}")]
    Field { point: String, reason: String },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("grid rejected: {0}")]
    Grid(String),

    #[error("eigenproblem diagnostic: {0}")]
    Spectral(String),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
