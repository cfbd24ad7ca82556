//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Failure categories mirroring the contracts of the core operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes or dimensions do not line up.
    Shape(String),
    /// A structural/configuration parameter is invalid (even kernel width, Z = 0, ...).
    Config(String),
    /// A call-site precondition was violated (negative step size, missing gradient, ...).
    Contract(String),
    /// A numeric invariant broke (non-finite value where finiteness is guaranteed).
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
