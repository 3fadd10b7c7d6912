use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {value} outside [0, {cap}]")]
    ValueOutOfRange { value: f64, cap: f64 },

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("feature norm {0} exceeds 1")]
    FeatureNorm(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing oracle value: {0}")]
    MissingOracle(String),

    #[error("state coverage mismatch: {0}")]
    Coverage(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Config problems are reported with exit code 2, everything else with 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
