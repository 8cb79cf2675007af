//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KrfError>;

#[derive(Debug, Error)]
pub enum KrfError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sample too small for KS")]
    SampleTooSmallForKs,

    #[error("BQ input out of range: {0}")]
    BqInputOutOfRange(String),

    #[error("strata do not tile the face: {0}")]
    StrataMismatch(String),

    #[error("unknown ground")]
    UnknownGround,

    #[error("no variogram pairs")]
    NoVariogramPairs,

    #[error("variogram fit failed: {0}")]
    VariogramFitFailed(String),

    #[error("degenerate kriging system (rcond {rcond:.3e})")]
    DegenerateKrigingSystem { rcond: f64 },

    #[error("stream out of order at chainage {0}")]
    StreamOutOfOrder(f64),

    #[error("PR undefined: no positive samples")]
    PrUndefined,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty hyperparameter grid")]
    EmptyGrid,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl KrfError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        KrfError::Io {
            path: path.into(),
            source,
        }
    }
}
