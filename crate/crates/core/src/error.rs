use thiserror::Error;

/// Errors raised by the mean-field toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("particle {particle} left the finite range at step {step}")]
    BlowUp { step: usize, particle: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("regression design is rank deficient at step {step} (rank {rank} < {features}); use a positive ridge penalty")]
    RankDeficient {
        step: usize,
        rank: usize,
        features: usize,
    },

    #[error("ill-conditioned transition matrix at step {step} (|det| = {det:e})")]
    IllConditioned { step: usize, det: f64 },

    #[error("missing partial derivative: {0}")]
    MissingPartial(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            got,
        })
    }
}
