//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("invalid label {label} at index {index} (expected 0..{max})")]
    InvalidLabel { label: u8, index: usize, max: u8 },

    #[error("missing corpus: {0}")]
    MissingCorpus(String),

    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("causality violation: {0}")]
    CausalityViolation(String),

    #[error("invalid target {0} for head of size {1}")]
    InvalidTarget(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported generator family: {0}")]
    UnsupportedFamily(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),

    #[error("singular moment: {0}")]
    SingularMoment(String),

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("incomplete accuracy matrix: {0}")]
    IncompleteMatrix(String),

    #[error("invalid accuracy matrix: {0}")]
    InvalidMatrix(String),

    #[error("singular reference: {0}")]
    SingularReference(String),

    #[error("invalid resource ledger: {0}")]
    InvalidLedger(String),

    #[error("upstream error: {0}")]
    UpstreamError(String),

    #[error("aborted run: {0}")]
    AbortedRun(String),

    #[error("sweep failure: {0}")]
    SweepFailure(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
