use thiserror::Error;

/// Errors raised by fitting, prediction and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside the supported domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },

    #[error("predictor {column} has zero range (min = max = {value})")]
    ZeroRange { column: usize, value: f64 },

    #[error("predictor {column}, row {row}: nominal code {code} not in 1..={levels}")]
    BadLevel {
        column: usize,
        row: usize,
        code: f64,
        levels: usize,
    },

    #[error("non-finite value in predictor {column}, row {row}")]
    NonFinite { column: usize, row: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("prediction input {value} for predictor {column} lies outside the training range [{min}, {max}]")]
    OutOfRange {
        column: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerical routines rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
