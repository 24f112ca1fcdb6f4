use std::path::PathBuf;

/// Broad classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Caller supplied an argument outside the operation's domain.
    InvalidInput,
    /// Malformed or unreadable data on disk.
    Data,
    /// A numerical invariant that valid inputs can never break.
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("bad magic bytes (expected FVTN)")]
    BadMagic,

    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("trailing bytes after tensor payload")]
    TrailingBytes,

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("dimension must be positive")]
    ZeroDimension,

    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cannot normalize zero vector")]
    ZeroVector,

    #[error("not a probability vector: {0}")]
    NotSimplex(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough tokens outside top-k (k = {k}, k0 = {k0}, n = {n})")]
    NotEnoughTokens { k: usize, k0: usize, n: usize },

    #[error("resolution too coarse")]
    ResolutionTooCoarse,

    #[error("no valid violating q")]
    NoViolatingQ,

    #[error("oracle supports at most {max} entries, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("sigma exceeds schedule (sigma' = {scaled_sigma}, max {max_sigma})")]
    SigmaExceedsSchedule { scaled_sigma: f64, max_sigma: f64 },

    #[error("every alpha sample evaluated to NaN")]
    AllSamplesNan,

    #[error("threshold undefined (log argument {0})")]
    ThresholdUndefined(f64),

    #[error("draw {index}: {source}")]
    Draw {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at PGD iterate {0}")]
    NonFiniteLoss(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::UnexpectedEof
            | Error::TrailingBytes
            | Error::NonFinite(_) => ErrorKind::Data,
            Error::ThresholdUndefined(_) | Error::Invariant(_) | Error::AllSamplesNan => ErrorKind::Internal,
            Error::Draw { source, .. } => source.kind(),
            _ => ErrorKind::InvalidInput,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
