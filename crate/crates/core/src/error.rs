use thiserror::Error;

/// Errors produced by the retrieval engine and the adapter trainer.
#[derive(Debug, Error)]
pub enum CirError {
    #[error("vector norm is below 1e-12; cannot normalize")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("embedding has no components")]
    EmptyVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("query `{query_id}` has dimension {found}, gallery has {expected}")]
    QueryDimMismatch {
        query_id: String,
        expected: usize,
        found: usize,
    },
    #[error("balancing scalar {0} is outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("inputs are antipodal (angle {angle:.6} rad); interpolation path is undefined")]
    Antipodal { angle: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"CEB1\"")]
    BadMagic([u8; 4]),
    #[error("bad magic {0:?}, expected \"CTA1\"")]
    BadAdapterMagic([u8; 4]),
    #[error("file truncated while reading {what} at byte {offset}")]
    TruncatedFile { what: &'static str, offset: u64 },
    #[error("unexpected trailing bytes after the last record")]
    TrailingBytes,
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("id `{0}` is empty, not valid UTF-8, or longer than 256 bytes")]
    BadId(String),
    #[error("entry `{id}` has norm {norm}, outside the 1e-3 tolerance")]
    NormDrift { id: String, norm: f64 },
    #[error("entry `{0}` contains a non-finite component")]
    NonFiniteEntry(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("ranked list for `{found}` does not align with instance `{expected}`")]
    QueryMismatch { expected: String, found: String },
    #[error("{ranked} ranked lists for {instances} instances")]
    CountMismatch { ranked: usize, instances: usize },
    #[error("instance `{0}` has no subset_ids")]
    MissingSubset(String),
    #[error("invalid instance `{query_id}`: {reason}")]
    InvalidInstance { query_id: String, reason: String },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CirError>,
    },
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("k must be at least 1")]
    ZeroK,

    #[error("no pairs given")]
    EmptyPairs,
    #[error("bad config: {0}")]
    BadConfig(String),
}

impl CirError {
    /// True for errors caused by structurally malformed input files, as opposed
    /// to well-formed input that fails a domain check.
    pub fn is_malformed_input(&self) -> bool {
        matches!(
            self,
            CirError::BadMagic(_)
                | CirError::BadAdapterMagic(_)
                | CirError::TruncatedFile { .. }
                | CirError::TrailingBytes
                | CirError::BadHeader(_)
                | CirError::BadId(_)
                | CirError::DuplicateId(_)
                | CirError::NormDrift { .. }
                | CirError::NonFiniteEntry(_)
                | CirError::MalformedLine { .. }
        ) || matches!(self, CirError::AtLine { source, .. } if source.is_malformed_input())
    }
}

pub type Result<T, E = CirError> = std::result::Result<T, E>;
