use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate rotation input: {0}")]
    Degenerate(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid format: {0}")]
    Format(String),
    #[error("hash mismatch for {what}: file has {found}, expected {expected}")]
    HashMismatch {
        what: &'static str,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Short category name, used for CLI exit codes and diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::Contract(_) => "contract",
            Error::Degenerate(_) | Error::NonFinite(_) => "numerical",
            Error::Format(_) | Error::HashMismatch { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}
