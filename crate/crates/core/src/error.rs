use thiserror::Error;

/// Errors raised while building or analysing a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fock space with {sites} sites exceeds the guard of {limit} sites")]
    DimensionGuard { sites: usize, limit: usize },

    #[error("kernel is not hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("spectral gap precondition violated: {0}")]
    GapPrecondition(String),

    #[error("eigenvalue {0} is not simple")]
    NotSimple(String),

    #[error("numerical method did not converge: {0}")]
    NoConvergence(String),

    #[error("partition function is ill-conditioned (|Z| = {0:e})")]
    IllConditioned(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("matrix is not positive semidefinite with unit diagonal: {0}")]
    NotCorrelationMatrix(String),

    #[error("odd interactions are not supported here")]
    OddInteraction,

    #[error("expansion guard exceeded: {0}")]
    ExpansionGuard(String),

    #[error("too few usable samples for a fit ({0})")]
    TooFewSamples(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
