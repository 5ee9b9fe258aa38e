use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("value {value} lies outside the open support ({lower}, {upper})")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("density vectors are defined on different quadrature grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate surrogate: slope {slope:e} is below threshold {threshold:e}")]
    DegenerateSurrogate { slope: f64, threshold: f64 },

    #[error("design variable {index} = {value} is outside [{lower}, {upper}]")]
    DesignOutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("uncertainty value {value} is outside [{lower}, {upper}]")]
    UncertaintyOutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("sample responses carry no design jacobian")]
    MissingJacobian,

    #[error("samples have zero spread")]
    ZeroSpread,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
