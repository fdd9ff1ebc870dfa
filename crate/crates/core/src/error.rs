use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("point outside the support: {0}")]
    OutOfSupport(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("insufficient samples: need {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("insufficient tail excesses: need {needed}, got {got}")]
    InsufficientTail { needed: usize, got: usize },
    #[error("quantile level {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("copula input outside (0, 1): {0}")]
    InvalidPit(String),
    #[error("length scale must be positive, got {0}")]
    InvalidLengthScale(f64),
    #[error("sample set carries no unnormalized log-posterior values")]
    MissingDensities,
    #[error("kernel matrix is ill-conditioned even with jitter {0:e}")]
    IllConditioned(f64),
    #[error("could not find a valid initial point: {0}")]
    InitFailure(String),
    #[error("all importance weights are zero")]
    DegenerateWeights,
    #[error("ODE step size underflow at t = {0}")]
    StiffnessFailure(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("operation not supported: {0}")]
    Unsupported(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
