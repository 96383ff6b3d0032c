//! Toolkit-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SebaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity error: enumeration needs {required} lattice visits, budget is {budget}")]
    Capacity { required: u128, budget: u128 },

    #[error("range error: {what} requires {required}, have {have}")]
    Range {
        what: &'static str,
        required: f64,
        have: f64,
    },

    #[error("lambda = {lambda} is within the pole guard of norm index {index}")]
    PoleProximity { lambda: f64, index: usize },

    #[error("gap {index} is too narrow to solve (width {width:.3e})")]
    DegenerateGap { index: usize, width: f64 },

    #[error("ground-state bracketing found no sign change down to -{b_max:.3e}; F(-B_max) = {f_at_b_max:.6e}")]
    BracketFailure { b_max: f64, f_at_b_max: f64 },

    #[error("admissible sigma search exceeded {max:.1e}; c(phi) is pathological")]
    SigmaSearchFailed { max: f64 },

    #[error("quadrature did not converge: worst subinterval [{a:.6e}, {b:.6e}] with error {err:.3e}")]
    QuadratureFailure { a: f64, b: f64, err: f64 },

    #[error("admissibility condition violated: {0}")]
    Admissibility(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("sample too small: {0}")]
    SampleSize(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported schema version: {0}")]
    SchemaVersion(String),
}

pub type Result<T> = std::result::Result<T, SebaError>;
