use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("unknown question tokens: {0:?}")]
    UnknownTokens(Vec<String>),
    #[error("unknown answer: {0:?}")]
    UnknownAnswer(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("missing attribution for sample {0}")]
    MissingAttribution(String),
    #[error("mask grid mismatch: {0:?} vs {1:?}")]
    GridMismatch((usize, usize), (usize, usize)),
    #[error("run-length sum {sum} does not match grid {rows}x{cols}")]
    RunSumMismatch {
        sum: usize,
        rows: usize,
        cols: usize,
    },
    #[error("malformed box in record {record}: {detail}")]
    MalformedBox { record: String, detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Error::ShapeMismatch { op, detail }
    }
}
