use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid SIR parameters: {0}")]
    InvalidParams(String),

    #[error("SIR solution left the unit interval at week {week}: {compartment} = {value}")]
    NumericalBlowUp { week: usize, compartment: &'static str, value: f64 },

    #[error("NaN input to {0}")]
    NanInput(&'static str),

    #[error("SIR fit failed: {0}")]
    OptimizationFailed(String),

    #[error("sample covariance is not positive definite (after jitter)")]
    SingularCovariance,

    #[error("truncated prior rejected {0} consecutive proposals")]
    RejectionExhausted(usize),

    #[error("{0}")]
    Domain(String),

    #[error("sampler initialization failed after {0} prior draws")]
    InitializationFailed(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid diagnostic input: {0}")]
    DiagnosticInput(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("season {season} is incomplete; missing weeks {missing:?}")]
    IncompleteSeason { season: i32, missing: Vec<usize> },

    #[error("no truth available for {0}")]
    MissingTruth(String),

    #[error("invalid calendar input: {0}")]
    Calendar(String),

    #[error("fetch failed ({}): {msg}", if *.retryable { "retryable" } else { "permanent" })]
    Fetch { retryable: bool, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
