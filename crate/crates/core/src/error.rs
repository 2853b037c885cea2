use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Source;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate document id `{id}` (line {line})")]
    DuplicateId { id: String, line: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("vector `{id}` has a non-finite component")]
    NonFinite { id: String },

    #[error("vector `{id}`: norm drift exceeds tolerance (norm {norm:.6}, tolerance {tolerance})")]
    NormDrift {
        id: String,
        norm: f64,
        tolerance: f64,
    },

    #[error("vector `{id}` is not unit norm (norm {norm:.6})")]
    NotUnitNorm { id: String, norm: f64 },

    #[error("no embedding for document `{0}`")]
    MissingEmbedding(String),

    #[error("embedding for unknown document `{0}`")]
    UnknownEmbedding(String),

    #[error("embedding-space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("no context index configured for source {0}")]
    MissingSource(Source),

    #[error("record `{0}` has no maskable tokens")]
    NothingToMask(String),

    #[error("qrels: {0}")]
    Qrels(String),

    #[error("run: {0}")]
    Run(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("output directory {} is locked by another run", .0.display())]
    Locked(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised while validating inputs, before any work starts.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
