use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("grid is not binary")]
    NotBinary,
    #[error("field is constant and cannot be thresholded")]
    DegenerateField,
    #[error("homogenization did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("singular system: {0}")]
    Singular(String),
}
