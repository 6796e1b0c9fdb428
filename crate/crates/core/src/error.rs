use thiserror::Error;

/// Errors raised by the numeric kernels and the statistic builders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("direction vector gives zero variance ({variance:e})")]
    DegenerateDirection { variance: f64 },

    #[error("coefficient a[{look}][{look}] is zero; combination must include the current statistic")]
    TrivialCombination { look: usize },

    #[error("look index {look} out of range 1..={max}")]
    LookOutOfRange { look: usize, max: usize },

    #[error("look order violated: earlier time {earlier} exceeds later time {later}")]
    LookOrder { earlier: f64, later: f64 },

    #[error("restriction time {restriction} exceeds analysis time {analysis_time}")]
    RestrictionExceedsFollowup { restriction: f64, analysis_time: f64 },

    #[error("arm {arm} has no subjects")]
    ArmMissing { arm: u8 },

    #[error("degenerate arm allocation (pi_hat = {pi_hat})")]
    DegenerateArm { pi_hat: f64 },

    #[error("information sequence is not strictly increasing at look {look}")]
    NonMonotoneInformation { look: usize },

    #[error("invalid spending plan: {0}")]
    InvalidPlan(String),

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("dataset schema error: {0}")]
    Schema(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
