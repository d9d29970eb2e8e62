use thiserror::Error;

/// Errors raised by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("lottery probabilities must sum to 1 (got {prob1} + {prob2} = {sum})")]
    ProbabilitySum { prob1: f64, prob2: f64, sum: f64 },

    #[error("duplicate observation for subject {subject}, pair {pair}, session {session}")]
    DuplicateObservation {
        subject: String,
        pair: String,
        session: u8,
    },

    #[error("duplicate pair id {0}")]
    DuplicatePair(String),

    #[error("unknown pair id {0}")]
    UnknownPair(String),

    #[error("unknown subject id {0}")]
    UnknownSubject(String),

    #[error("{0}")]
    Domain(String),

    #[error("no observations: {0}")]
    NoObservations(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("internal consistency violation: {0}")]
    Consistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
