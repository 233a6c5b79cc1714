use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tokenizer
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is below the {minimum} required for specials and alphabet")]
    VocabTooSmall { target: usize, minimum: usize },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),

    // templating
    #[error("template has no [MASK] placeholder: {0:?}")]
    NoMask(String),
    #[error("template has more than one [MASK] placeholder: {0:?}")]
    MultipleMasks(String),
    #[error("template slots are invalid ({reason}): {template:?}")]
    BadSlots { template: String, reason: String },
    #[error("arity mismatch: expected {expected} document(s), got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("template needs {needed} tokens of overhead but max_len is {max_len}")]
    TemplateTooLong { needed: usize, max_len: usize },
    #[error("need at least {k} candidates, have {available}")]
    NotEnoughCandidates { k: usize, available: usize },
    #[error("validation data is empty")]
    EmptyValidation,

    // encoder
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input {0} has no [MASK] position")]
    MissingMaskIndex(usize),
    #[error("no targets to compute a loss over")]
    EmptyTargets,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    // finetune
    #[error("inference template has not been selected")]
    InferenceTemplateUnset,
    #[error("training or validation data is empty")]
    EmptyData,
    #[error("metric {metric} does not fit a {task} task")]
    MetricTaskMismatch { metric: String, task: String },

    // metrics
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("baseline is zero")]
    ZeroBaseline,

    // data
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error("dataset is not a classification task")]
    NotClassification,
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    // harness
    #[error("baseline strategy pft_cls is required for improvement percentages")]
    MissingBaseline,
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("dataset error for task {task}: {source}")]
    Dataset {
        task: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
