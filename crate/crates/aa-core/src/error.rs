use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit-code contract: configuration and
/// dimension problems are caller mistakes (exit 2), data/parse/lookup
/// problems are bad inputs (exit 3), numeric failures are exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
