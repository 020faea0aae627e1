use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("replicate count must be at least 1")]
    ZeroReplicates,

    #[error("producer count must be at least 1")]
    ZeroProducers,

    #[error("invalid market instance: {0}")]
    InvalidInstance(String),

    #[error("invalid capacity profile: {0}")]
    InvalidCapacity(String),

    #[error("dimension mismatch: expected {expected} producers, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("producer index {index} out of range for {n} producers")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("total payment is zero; efficiency is undefined")]
    ZeroTotalPayment,

    #[error("operation requires a symmetric instance (all costs equal)")]
    AsymmetricInstance,

    #[error(
        "first-order residual does not change sign on [0, {upper}] \
         (residual at 0: {lo_residual}, at upper bound: {hi_residual})"
    )]
    BracketFailure {
        upper: f64,
        lo_residual: f64,
        hi_residual: f64,
    },

    #[error("coordinate descent did not converge within {iterations} sweeps")]
    IterationLimitExceeded { iterations: usize },

    #[error("discrete instance has {outcomes} joint outcomes (limit {limit})")]
    OutcomeExplosion { outcomes: u128, limit: u128 },

    #[error("profile is not an equilibrium: max unilateral gain {max_gain} exceeds epsilon {epsilon}")]
    NotAnEquilibrium { max_gain: f64, epsilon: f64 },

    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("input contains no data rows")]
    EmptyFile,

    #[error("site '{0}' has no positive values")]
    AllZeroSite(String),

    #[error("site '{0}' has zero variance")]
    ZeroVarianceSite(String),

    #[error("at least {required} sites are required, found {found}")]
    InsufficientSites { required: usize, found: usize },

    #[error("at least {required} rows are required, found {found}")]
    InsufficientRows { required: usize, found: usize },

    #[error("with {n} producers: {source}")]
    AtProducerCount {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad input (configuration, files, model specs) rather
    /// than numerical failure of a solve.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidDistribution(_)
            | Error::ZeroReplicates
            | Error::ZeroProducers
            | Error::InvalidInstance(_)
            | Error::InvalidCapacity(_)
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::AsymmetricInstance
            | Error::InvalidSettings(_)
            | Error::Parse { .. }
            | Error::EmptyFile
            | Error::AllZeroSite(_)
            | Error::ZeroVarianceSite(_)
            | Error::InsufficientSites { .. }
            | Error::InsufficientRows { .. }
            | Error::OutcomeExplosion { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::AtProducerCount { source, .. } => source.is_input_error(),
            Error::ZeroTotalPayment
            | Error::BracketFailure { .. }
            | Error::IterationLimitExceeded { .. }
            | Error::NotAnEquilibrium { .. } => false,
        }
    }
}
