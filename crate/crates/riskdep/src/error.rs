use std::fmt;

/// Library error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its domain (nonpositive shape, rho out of
    /// family range, probability outside (0,1), ...).
    InvalidParameter(String),
    /// Array or matrix dimensions do not line up.
    DimensionMismatch(String),
    /// An operation that needs data got none.
    EmptyInput(String),
    /// A numerical procedure failed to converge or produced a non-finite
    /// value where one was required.
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::EmptyInput(msg) => write!(f, "empty input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
