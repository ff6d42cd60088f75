use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data appear separable: coefficient norm {norm:.3e} exceeded the divergence bound")]
    Separation { norm: f64 },

    #[error("Hessian is singular even after ridge regularisation")]
    Singular,

    #[error("no convergence after {iterations} iterations (max |score| = {grad_norm:.3e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("subsample is empty")]
    EmptySubsample,

    #[error("class {label} has no observations")]
    TooFewCases { label: u8 },

    #[error("acceptance rate too low: {proposals} proposals for {accepted} acceptances")]
    AcceptanceTooLow { proposals: u64, accepted: usize },

    #[error("point is outside the population support")]
    OutsideSupport,

    #[error("coordinate {0} is not binary")]
    NonBinary(usize),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("test set must contain both classes")]
    SingleClass,

    #[error("at least {needed} draws required, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("{failed} of {total} replications failed for method {method}")]
    TooManyFailures {
        method: String,
        failed: usize,
        total: usize,
    },
}

impl Error {
    /// True for failures of the numerical fit itself (separation, singular
    /// Hessian, non-convergence).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation { .. } | Error::Singular | Error::NotConverged { .. }
        )
    }
}
