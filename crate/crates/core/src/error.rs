use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence: token sequences must have length >= 1")]
    EmptySequence,

    #[error("unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { symbol: char, position: usize },

    #[error("token id {id} at position {position} is out of range for an alphabet of size {size}")]
    TokenOutOfRange { id: usize, position: usize, size: usize },

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid germline pair {id}: {reason}")]
    InvalidPair { id: String, reason: String },

    #[error("time {0} is outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token {token} at position {position} has zero probability under the {variant} kernel")]
    ImpossibleState {
        variant: &'static str,
        position: usize,
        token: usize,
    },

    #[error("state space too large: {states} joint states exceed the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("degenerate posterior at position {position} (t = {t}, dt = {dt}): all transition weights are zero")]
    DegeneratePosterior { position: usize, t: f64, dt: f64 },

    #[error("non-finite loss at step {step} (t values {t_values:?}, max score entry {max_score})")]
    NonFiniteLoss {
        step: u64,
        t_values: Vec<f64>,
        max_score: f64,
    },

    #[error("non-finite ELBO integrand at t = {t}, position {position}")]
    NonFiniteIntegrand { t: f64, position: usize },

    #[error("non-finite classifier logit: {0}")]
    NonFiniteLogit(String),

    #[error("checkpoint format version {found} is newer than supported version {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint shape mismatch for tensor {name}: expected {expected:?}, found {found:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("truncated checkpoint: {0}")]
    CheckpointTruncated(String),

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("unsatisfiable split: {0}")]
    UnsatisfiableSplit(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed data file {path}: {message}")]
    DataFormat { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line: 1 for usage, config and
    /// data problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteIntegrand { .. }
            | Error::NonFiniteLogit(_)
            | Error::DegeneratePosterior { .. }
            | Error::ImpossibleState { .. } => 2,
            _ => 1,
        }
    }
}
