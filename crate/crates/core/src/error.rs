use thiserror::Error;

/// Errors raised across the library.
///
/// Numerical failures carry whatever partial information was available so a
/// sweep can log the point and keep going.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HypError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("accuracy target missed: estimate {estimate:e} with error bound {error_bound:e} ({context})")]
    Accuracy {
        estimate: f64,
        error_bound: f64,
        context: String,
    },

    #[error("resource cap hit at radius {achieved_radius}: partial value {partial:e}, tail bound {tail_bound:e}")]
    Resource {
        achieved_radius: f64,
        partial: f64,
        tail_bound: f64,
    },

    #[error("range error: {0}")]
    Range(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, HypError>;

pub(crate) fn domain(msg: impl Into<String>) -> HypError {
    HypError::Domain(msg.into())
}

/// A value together with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }

    pub fn rel_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.error / self.value.abs()
        }
    }
}
