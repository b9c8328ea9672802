//! Crate-wide error type. Every fallible public function returns
//! [`Result`] so callers can route all failures through one enum.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QvixError>;

#[derive(Debug, Error)]
pub enum QvixError {
    /// A precondition on caller-supplied data failed (empty options list,
    /// zero-length inputs, out-of-range counts, and similar).
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown prompt version `{0}` (expected one of v0, v1, v2, v3)")]
    UnknownVersion(String),

    /// The generator replied, but with fewer usable pre-questions than asked for.
    #[error("pre-question shortfall: found {found} of {expected} expected")]
    ParseShortfall { found: usize, expected: usize },

    /// The generator reply could not be parsed at all (duplicate indices,
    /// no numbered lines, and similar structural problems).
    #[error("malformed pre-question output: {0}")]
    MalformedOutput(String),

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A remote (or scripted) endpoint failed after retries were exhausted.
    #[error("endpoint `{endpoint_id}` failed: {message}")]
    Endpoint {
        endpoint_id: String,
        message: String,
    },

    #[error("image `{path}`: {message}")]
    Image { path: String, message: String },

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("vector dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
