use thiserror::Error;

pub type Result<T> = std::result::Result<T, ChibarError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChibarError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error(
        "covariance entry ({row}, {col}) = {value} is negative; chi-bar mixtures are only \
         valid under non-negative correlation"
    )]
    NegativeCorrelation { row: usize, col: usize, value: f64 },

    #[error("dimension {k} exceeds the supported maximum {max} for {what}")]
    DimensionTooLarge {
        k: usize,
        max: usize,
        what: &'static str,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("covariance generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
