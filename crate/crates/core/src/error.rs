use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate embedding: pooled projection is the zero vector")]
    DegenerateEmbedding,

    #[error("wav format error in {field}: {detail}")]
    WavFormat { field: &'static str, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("utterance too short: need {needed} frames, have {available}")]
    ShortUtterance { needed: usize, available: usize },

    #[error("utterance `{id}`: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            line,
            detail: detail.into(),
        }
    }

    /// Attach an utterance id to an error.
    pub fn for_utterance(self, id: impl Into<String>) -> Self {
        Error::Utterance {
            id: id.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
