use thiserror::Error;

/// Errors raised by the analysis and experiment routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BilipError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate pair: x and y coincide (or nearly so)")]
    DegeneratePair,

    #[error("angle undefined for a zero vector")]
    UndefinedAngle,

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("{what} exceeds the supported size: {detail}")]
    OverLimit { what: &'static str, detail: String },

    #[error("cone has empty interior")]
    EmptyInterior,

    #[error("numerical failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, BilipError>;

pub(crate) fn input(msg: impl Into<String>) -> BilipError {
    BilipError::Input(msg.into())
}
