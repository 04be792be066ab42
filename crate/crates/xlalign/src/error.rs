use std::path::PathBuf;

/// Errors produced by corpus ingestion, training, evaluation and the CLI.
///
/// Tensor-level contract violations (shape mismatches, domain errors) panic
/// inside [`crate::autodiff`] instead; everything that can be triggered by
/// user input or configuration surfaces here.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus: {path} contains no sentence pairs")]
    EmptyCorpus { path: PathBuf },

    #[error("insufficient data: need at least {needed} pairs, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient negatives: batch of size {batch} leaves no negative instances")]
    InsufficientNegatives { batch: usize },

    #[error("degenerate vector: zero norm in {context}")]
    DegenerateVector { context: String },

    #[error("incomplete backward: parameter `{param}` has no gradient")]
    IncompleteBackward { param: String },

    #[error("divergence: non-finite loss at seed {seed}, epoch {epoch}, batch {batch}")]
    Divergence { seed: u64, epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no runs to aggregate")]
    EmptyResults,

    #[error("degenerate variance: all paired differences are zero")]
    DegenerateVariance,

    #[error("no evaluable dictionary entries (every source word is out of vocabulary)")]
    NoEvaluableEntries,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}
