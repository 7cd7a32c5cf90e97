use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty sentence")]
    EmptySentence,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("inconsistent embedding dimension at line {line}: expected {expected}, found {found}")]
    EmbeddingDim {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("no embedding for token `{0}`")]
    NoEmbedding(String),

    #[error("k too large: requested {requested}, only {available} available")]
    KTooLarge { requested: usize, available: usize },

    #[error("rank must be at least 1")]
    InvalidRank,

    #[error("token `{0}` has no transition matrix and the teacher has no `<unk>` matrix")]
    UnknownToken(String),

    #[error("trace record {index}: {message}")]
    TraceRecord { index: usize, message: String },

    #[error("state index {index} out of range for {n_states} states")]
    StateOutOfRange { index: usize, n_states: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
