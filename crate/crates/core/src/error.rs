use thiserror::Error;

/// Errors raised by the analytical models, the optimizer and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("segment list is empty")]
    EmptySegments,

    #[error("invalid code parameters: {0}")]
    InvalidCode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid interval: lower level {lo} must be below upper level {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("negative transition probability {value:e} in row {row}")]
    NegativeProbability { row: usize, value: f64 },

    #[error("singular Markov chain: {0}")]
    SingularChain(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("block duration exceeds the average duration of fading state {state}")]
    InfeasibleBlockDuration { state: usize },

    #[error("delay support grew to {size} points")]
    SupportExplosion { size: usize },

    #[error("evaluator failed at alphas={alphas:?} taus={taus:?}: {source}")]
    EvaluatorFailure {
        alphas: Vec<f64>,
        taus: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("I/O failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
