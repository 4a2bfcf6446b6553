use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("operation not supported in {0} mode")]
    UnsupportedMode(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("divergent series: {0}")]
    DivergentSeries(String),
    #[error("potential is not of positive type: {0}")]
    Potential(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("numerically singular matrix: {0}")]
    Singular(String),
    #[error("unreachable endpoint: {0}")]
    Unreachable(String),
    #[error("root not found: {0}")]
    RootNotFound(String),
    #[error("cannot merge records: {0}")]
    Merge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
