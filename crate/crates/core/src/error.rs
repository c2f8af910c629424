use thiserror::Error;

/// Errors raised by estimators, mechanisms and population tooling.
#[derive(Debug, Clone, PartialEq, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("k profile has {got} entries but the population has {expected} users")]
    ProfileLength { expected: usize, got: usize },
    #[error("meta-distribution support [{lo}, {hi}] is not contained in [0, 1]")]
    SupportOutOfRange { lo: f64, hi: f64 },
    #[error("sigma_p^2 = {sigma_p2} exceeds p(1 - p) = {bound}")]
    VarianceTooLarge { sigma_p2: f64, bound: f64 },
    #[error("{0} received no input")]
    Empty(&'static str),
    #[error("user sample count {k} exceeds the declared bound k_max = {k_max}")]
    CountAboveBound { k: u64, k_max: u64 },
    #[error("cannot partition {n} users into top, middle and bottom groups: {reason}")]
    InfeasibleGroups { n: usize, reason: String },
    #[error("{0} requires delta > 0")]
    DeltaRequired(&'static str),
    #[error("variance estimator returned no estimate: {0}")]
    NoVarianceEstimate(String),
    #[error("malformed population record on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
