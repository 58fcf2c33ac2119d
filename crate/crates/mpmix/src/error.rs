//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}, column '{column}': value '{value}' does not conform to kind {kind}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
        kind: String,
    },
    #[error("non-rectangular input: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("missing value at row {row}, column '{column}'")]
    Missing { row: usize, column: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate component (weight sum {0:.3e})")]
    DegenerateComponent(f64),
    #[error("all restarts degenerate")]
    AllRestartsDegenerate,
    #[error("non-finite density at row {row}, variable '{variable}'")]
    NonFiniteDensity { row: usize, variable: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
