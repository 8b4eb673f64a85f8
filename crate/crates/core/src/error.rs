use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    ParseLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("unknown doc_id {0:?}")]
    UnknownDocId(String),

    #[error("document {0:?} has no title")]
    MissingTitle(String),

    #[error("document {0:?} is empty after tokenization")]
    EmptyDocument(String),

    #[error("empty token sequence: {0}")]
    EmptyTokens(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("no entity match in question, no template extracted")]
    NoTemplate,

    #[error("no satisfiable template for passage {0:?}")]
    NoCandidateTemplate(String),

    #[error("no passage entity satisfies slot type {0:?}")]
    UnsatisfiableSlot(String),

    #[error("query {0:?} has no relevance judgments")]
    MissingJudgments(String),

    #[error("unknown scorer {0:?}")]
    UnknownScorer(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, Error>;
