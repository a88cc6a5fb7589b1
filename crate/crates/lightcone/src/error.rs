//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("header inconsistent with payload: {0}")]
    HeaderMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("field too small for cone geometry: no interior cones")]
    NoInteriorCones,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("singular design matrix")]
    SingularDesign,

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
