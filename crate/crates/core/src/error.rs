use thiserror::Error;

use crate::transport::WireError;

/// A vector or matrix did not have the length its consumer expects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{what}: expected {expected}, got {actual}")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub actual: usize,
}

impl ShapeError {
    pub fn check(what: &'static str, expected: usize, actual: usize) -> Result<(), ShapeError> {
        if expected == actual {
            Ok(())
        } else {
            Err(ShapeError { what, expected, actual })
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("startup failure: {0}")]
    Startup(String),
    /// Deliberately injected for testing abort handling.
    #[error("fault: {0}")]
    Fault(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
