use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

pub type Result<T> = core::result::Result<T, Error>;
