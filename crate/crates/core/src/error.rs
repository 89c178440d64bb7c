use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("timestamps are not monotonic at row {row}")]
    NonMonotonicTime { row: usize },
    #[error("gap of {len} samples in channel `{channel}` starting at index {start} (at most 3 can be interpolated)")]
    GapTooLarge {
        channel: String,
        start: usize,
        len: usize,
    },
    #[error("value {value} out of range in channel `{channel}` at index {index}")]
    ValueOutOfRange {
        channel: String,
        index: usize,
        value: f64,
    },
    #[error("new step {new_step}s is not an integer multiple of {step}s")]
    NonIntegerRatio { step: i64, new_step: i64 },
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("series too short: need more than {needed} samples, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("valve-times-dT actuator input requires a supply temperature")]
    MissingSupplyTemperature,
    #[error("plant temperature {value} left the sanity band at {time}")]
    UnstableStep { value: f64, time: String },
    #[error("solver exceeded {0} iterations")]
    MaxIterationsExceeded(usize),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("forecast covers {have} steps, horizon needs {needed}")]
    ForecastTooShort { needed: usize, have: usize },
    #[error("quadratic cost is not positive semidefinite (min eigenvalue {0})")]
    NonConvexCost(f64),
    #[error("lower output bounds make the ICNN problem non-convex")]
    LowerBoundRequested,
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
