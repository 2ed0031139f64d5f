use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("degenerate function: {0}")]
    DegenerateFunction(String),

    #[error("invalid function spec: {0}")]
    InvalidSpec(String),

    #[error("component {index} out of domain: {value} not in [{lo}, {hi}]")]
    Domain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("peak power violated at transmitter {k}, channel use {m}: |x|^2 = {power} > P = {limit}")]
    PeakPower {
        k: usize,
        m: usize,
        power: f64,
        limit: f64,
    },

    #[error("invalid channel config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
