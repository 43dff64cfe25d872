use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("covariance of size {size} is not factorizable even after diagonal jitter")]
    Factorization { size: usize },

    /// A hidden state (or sensitivity vector) became non-finite.
    #[error("non-finite value at layer {layer}")]
    Overflow { layer: usize },

    #[error("{0} has zero norm")]
    ZeroNorm(&'static str),

    #[error("need at least {required} depths, got {actual}")]
    InsufficientDepths { required: usize, actual: usize },

    #[error("need at least {required} samples, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },

    #[error("sample contains non-positive values")]
    NonPositive,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field,
            reason: reason.into(),
        }
    }
}
