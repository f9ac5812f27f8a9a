//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any tollgate module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty registry")]
    EmptyRegistry,

    #[error("duplicate candidate id '{0}'")]
    DuplicateCandidate(String),

    #[error("negative price for candidate '{0}'")]
    NegativePrice(String),

    #[error("unknown candidate '{0}'")]
    UnknownCandidate(String),

    #[error("invalid price literal '{0}'")]
    InvalidPrice(String),

    #[error("line {line}: {msg}")]
    DatasetLine { line: usize, msg: String },

    #[error("duplicate record id '{0}'")]
    DuplicateRecord(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown family '{0}'")]
    UnknownFamily(String),

    #[error("record count must be positive")]
    EmptySynthesis,

    #[error("split fractions must be positive and sum to 1 (got {0})")]
    BadFractions(f64),

    #[error("unknown prompt id '{0}' in embedding store")]
    UnknownPromptId(String),

    #[error("embedding dimension mismatch: expected {expected}, found {found}{context}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("prediction/label length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("tolerance {0} outside [0, 1]")]
    InvalidTolerance(f64),

    #[error("strategy '{strategy}' requires the {stat} statistic")]
    MissingStaticStat {
        strategy: &'static str,
        stat: &'static str,
    },

    #[error("invalid static statistics: require 0 <= min <= max <= 1")]
    InvalidStaticStats,

    #[error("training loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("candidate '{0}' already covered by this estimator")]
    CandidateAlreadyPresent(String),

    #[error("parameter file version {found} unsupported (expected {expected})")]
    ParamsVersion { expected: u32, found: u32 },

    #[error("parameter file corrupt: {0}")]
    ParamsCorrupt(String),

    #[error("degenerate quality range: Q_max equals Q_min")]
    DegenerateQualityRange,

    #[error("degenerate cost range: anchor policies cost the same")]
    DegenerateCostRange,

    #[error("degenerate token totals")]
    DegenerateTokenTotals,

    #[error("degenerate baseline spread: oracle does not exceed random")]
    DegenerateBaselineSpread,

    #[error("k = {k} out of range for {n} candidates (need 1 <= k <= n-1)")]
    KOutOfRange { k: usize, n: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("prompt '{id}': {source}")]
    Prompt {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

impl Error {
    /// Attach a prompt id to an error bubbling out of a batch operation.
    pub fn for_prompt(self, id: &str) -> Self {
        Error::Prompt {
            id: id.to_owned(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
