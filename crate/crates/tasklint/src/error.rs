//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the corpus, parsing, dataset, training, and
/// persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: yaml parse error: {message}")]
    YamlParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: bad metadata record: {message}")]
    Metadata {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unreadable corpus root: {0}")]
    UnreadableRoot(PathBuf),

    #[error("cannot split {count} examples for module `{module_key}`: need at least 5")]
    TooFewExamples { module_key: String, count: usize },

    #[error("invalid split ratios: train {train} + test {test} must be < 1 and positive")]
    BadSplitRatios { train: f64, test: f64 },

    #[error("both donor pools are empty for module `{0}`")]
    DonorPoolsEmpty(String),

    #[error("no valid donor for module `{0}`: same-module pool has no other task and cross swaps are disabled")]
    NoValidDonor(String),

    #[error("embedding corpus is empty")]
    EmptyCorpus,

    #[error("embedding corpus has no position with a non-empty context window")]
    NoTrainingPairs,

    #[error("vocabulary of size {0} is too small for negative sampling")]
    VocabTooSmall(usize),

    #[error("invalid embedding config: {0}")]
    BadEmbeddingConfig(String),

    #[error("cannot compute padding over an empty training set")]
    EmptyTrainingSet,

    #[error("padded length {max_length} is too short for two conv/pool stages (need at least {min})")]
    SequenceBudgetTooSmall { max_length: usize, min: usize },

    #[error("training data for module `{0}` contains a single class")]
    SingleClassTraining(String),

    #[error("training aborted at epoch {epoch}: loss is not finite ({loss})")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("input shape ({rows}, {cols}) does not match model expectation ({want_rows}, {want_cols})")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    #[error("predictions ({predictions}) and truths ({truths}) differ in length")]
    LengthMismatch { predictions: usize, truths: usize },

    #[error("metrics need both classes present in the truth labels")]
    SingleClassTruth,

    #[error("{path}: malformed {what} file: {message}")]
    MalformedFile {
        path: PathBuf,
        what: &'static str,
        message: String,
    },

    #[error("model repository {dir} has no model for module `{module_key}`")]
    ModelMissing { dir: PathBuf, module_key: String },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("no tasks found under the configured corpus roots")]
    EmptyCorpusRoots,

    #[error("no module produced a trained model")]
    NoModelsTrained,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
