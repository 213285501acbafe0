use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(
        "dense kernel with {n} points exceeds the cap of {cap}; \
         use a matrix-free operator (e.g. FFT embedding) for grids this large"
    )]
    Capacity { n: usize, cap: usize },

    #[error("matrix is not positive definite: {0}")]
    Definiteness(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("bidiagonalization broke down at step {step}: {reason}")]
    Breakdown { step: usize, reason: String },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("rank deficient system: {0}")]
    Rank(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate trace term: {0}")]
    DegenerateTrace(String),

    #[error("parameter search failed: {0}")]
    SearchFailure(String),

    #[error("kernel fit failed: {0}")]
    FitFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
