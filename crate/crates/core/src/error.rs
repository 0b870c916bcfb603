use thiserror::Error;

/// Errors raised by the estimators and their building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdrError {
    #[error("invalid bandwidth {0}: must be finite and strictly positive")]
    InvalidBandwidth(f64),

    #[error("invalid dimension: {0}")]
    InvalidDimension(&'static str),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape {
        expected: &'static str,
        found: &'static str,
    },

    #[error("dataset has {n} observations for {p} covariates (need at least p + 2)")]
    TooFewObservations { n: usize, p: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("covariance matrix is rank deficient: eigenvalue {eigenvalue:e} at position {index}")]
    RankDeficient { eigenvalue: f64, index: usize },

    #[error("response has zero variance")]
    DegenerateResponse,

    #[error("matrix is not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("regression weights must be finite and nonnegative")]
    NegativeWeight,

    #[error("local window has no positive weights")]
    EmptyWindow,

    #[error("local normal equations could not be solved")]
    SingularGram,

    #[error("every anchor was trimmed; use a larger sample or a smaller trimming threshold")]
    FullyTrimmed,

    #[error("basis update system is ill posed (zero or singular design)")]
    IllPosedStep,

    #[error("basis collapsed to rank below {0}")]
    RankCollapse(usize),

    #[error("basis columns are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("rejection sampler stalled after {0} proposals")]
    SamplingStall(u64),

    #[error("invalid simulation model: {0}")]
    InvalidModel(&'static str),
}

pub type Result<T> = core::result::Result<T, SdrError>;
