use thiserror::Error;

/// Crate-wide error type. Variants correspond to the failure classes the
/// public operations can hit rather than to modules, so callers can match on
/// what went wrong without caring where.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. `input` names the logical stream ("content",
    /// "cites", "config"), `line` is 1-based.
    #[error("format error in {input} line {line}: {msg}")]
    Format {
        input: String,
        line: usize,
        msg: String,
    },

    /// An argument violates a precondition (out-of-range probability,
    /// zero-sized request, empty input where data is required).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Mismatched dimensions between tensors, feature rows, or splits.
    #[error("shape error: {0}")]
    Shape(String),

    /// A node or class id outside the valid range.
    #[error("index error: {0}")]
    Index(String),

    /// Input values outside the domain an operation is defined on, such as
    /// non-binary features handed to the XOR perturbation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(input: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            input: input.to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
