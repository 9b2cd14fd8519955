use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI header: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedType(i16),
    #[error("truncated data section: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid value: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("not enough degrees of freedom: {n} observations for design rank {rank}")]
    DegreesOfFreedom { n: usize, rank: usize },
    #[error("contrast is not estimable under a rank-deficient design")]
    InestimableContrast,
    #[error("regressor is constant; correlation undefined")]
    DegenerateRegressor,
    #[error("design mismatch: {0}")]
    Design(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of numerical procedures rather than of inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::DegreesOfFreedom { .. }
                | Error::InestimableContrast
                | Error::DegenerateRegressor
        )
    }
}
