use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The spectrum denominator vanishes: the direction is not observable
    /// through the configurations used so far.
    #[error("direction is unobservable under the used configurations")]
    SingularDirection,

    #[error("estimation impossible: every grid point is unobservable")]
    EstimationImpossible,

    #[error("codebook exhausted")]
    CodebookExhausted,

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
