use std::fmt;
use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("class label {0} out of range 0..4")]
    Label(usize),

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample {index}: timestamp {t} does not increase (previous {prev})")]
    NonMonotonicTime { index: usize, prev: f64, t: f64 },

    #[error("sample {index}: duplicate timestamp {t}")]
    DuplicateTime { index: usize, t: f64 },

    #[error("coordinate ({x}, {y}) outside the {width}x{height} cage")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },

    #[error("{}:{line}: {kind}", path.display())]
    Record {
        path: PathBuf,
        line: u64,
        kind: RecordError,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("fold for cage {cage_id}: {source}")]
    Fold {
        cage_id: String,
        #[source]
        source: Box<Error>,
    },
}

/// What went wrong on one line of an input file.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordError {
    Malformed(String),
    OutOfBounds { x: f64, y: f64 },
    NonMonotonic { prev: f64, t: f64 },
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::Malformed(msg) => write!(f, "malformed row: {msg}"),
            RecordError::OutOfBounds { x, y } => {
                write!(f, "coordinate ({x}, {y}) outside cage bounds")
            }
            RecordError::NonMonotonic { prev, t } => {
                write!(f, "timestamp {t} does not increase (previous {prev})")
            }
        }
    }
}

/// Coarse classification of an [`Error`], used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::NonFinite { .. } => ErrorClass::Numeric,
            Error::Fold { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
