use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed text or binary input; `locus` is a line number for text
    /// formats or a byte offset for binary ones.
    #[error("parse error at {locus}: {msg}")]
    Parse { locus: String, msg: String },

    /// A precondition violation: out-of-domain point, empty cloud,
    /// mismatched sizes, invalid configuration, and the like.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn parse_at_line(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            locus: format!("line {line}"),
            msg: msg.into(),
        }
    }

    pub fn parse_at_offset(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            locus: format!("byte {offset}"),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
