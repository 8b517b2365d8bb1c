use thiserror::Error;

/// Errors surfaced by estimation, simulation and IO routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all points are identical; median pairwise distance is zero")]
    AllPointsEqual,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("system is singular even after ridge regularization")]
    SingularAfterRidge,
    #[error("smoothing bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("column {0} has zero variance")]
    DegenerateColumn(usize),
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("marginal density underflow at row {0}")]
    MarginalUnderflow(usize),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("fitted weights are not finite")]
    NonFiniteWeights,
    #[error("treatment column is constant")]
    ConstantTreatment,
    #[error("curve and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("missing column role: {0}")]
    MissingColumnRole(String),
    #[error("non-numeric cell at row {row}, column {col}: {value:?}")]
    NonNumericCell { row: usize, col: String, value: String },
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
