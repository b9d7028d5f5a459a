use std::path::PathBuf;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("utterance {utterance}, frame {frame}: {message}")]
    MalformedFrame {
        utterance: String,
        frame: usize,
        message: String,
    },

    #[error("unknown phoneme {label:?}")]
    UnknownPhoneme { label: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("no valid alignment: {frames} frames cannot emit {labels} labels")]
    NoValidAlignment { frames: usize, labels: usize },

    #[error("label sequence contains the blank index {0}")]
    BlankInLabels(usize),

    #[error("no feasible sequence")]
    NoFeasibleSequence,

    #[error("empty reference")]
    EmptyReference,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
