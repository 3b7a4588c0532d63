use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("at least 3 points are required, got {0}")]
    TooFewPoints(usize),

    #[error("points {0} and {1} coincide")]
    DuplicatePoints(usize, usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: self loop on unit {unit} with nonzero weight")]
    SelfLoop { line: usize, unit: usize },

    #[error("negative weight {weight} between units {i} and {j}")]
    NegativeWeight { i: usize, j: usize, weight: f64 },

    #[error("index {index} out of range for {n} units")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("degenerate weights matrix (largest eigenvalue {0:e})")]
    DegenerateMatrix(f64),

    #[error("weights matrix is already scaled")]
    AlreadyScaled,

    #[error("weights matrix must be scaled by its largest eigenvalue first")]
    NotScaled,

    #[error("eigensolver did not converge after {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("rank {l} outside [1, {n}]")]
    BadRank { l: usize, n: usize },

    #[error("dependence parameter {theta} is within 1e-10 of the pole 1/{lambda}")]
    PoleProximity { theta: f64, lambda: f64 },

    #[error("mixed model system is singular (pivot {pivot:e}, largest diagonal {scale:e})")]
    SingularSystem { pivot: f64, scale: f64 },

    #[error("optimizer failed: {0}")]
    OptimFailure(String),

    #[error("n = {n} exceeds the dense size guard of {limit}")]
    SizeGuard { n: usize, limit: usize },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("residuals are constant")]
    ConstantResiduals,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0} is not supported")]
    Unsupported(String),

    #[error("scenario `{scenario}`: field `{field}`: {message}")]
    Scenario {
        scenario: String,
        field: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
