use std::path::PathBuf;

/// Errors produced by the retrieval engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error("{file}: line {line}: {message}")]
    MalformedRow {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{file}: line {line}: {kind} id {id} does not resolve")]
    DanglingId {
        file: String,
        line: u64,
        kind: &'static str,
        id: u64,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("empty sequence for attention pooling")]
    EmptyAttention,

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated file: expected {expected} bytes, found {actual} (at offset {offset})")]
    Truncated {
        expected: u64,
        actual: u64,
        offset: u64,
    },

    #[error("corrupt file at offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("post {post_id}: hits not sorted")]
    HitsNotSorted { post_id: u64 },

    #[error("post {post_id}: duplicate fact-check id {fact_check_id} in hits")]
    DuplicateHit { post_id: u64, fact_check_id: u64 },

    #[error("post {post_id} missing from run {run}")]
    MissingPost { post_id: u64, run: String },

    #[error("degenerate vector for id {0}")]
    DegenerateVector(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
