use thiserror::Error;

/// Crate-wide error type. Variants are coarse by design: callers branch on
/// kind, messages carry the specifics.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A node id, row index, or segment id is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A configuration value violates its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An API was used out of sequence (e.g. reusing a consumed tape).
    #[error("invalid state: {0}")]
    State(String),

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents do not match the expected format.
    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
