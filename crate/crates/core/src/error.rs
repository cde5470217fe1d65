use thiserror::Error;

/// Errors raised by the model, controller and simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invalid impact state: {0}")]
    InvalidImpact(String),

    #[error("invalid linearization: omega^2 = {omega_sq} must be positive")]
    InvalidLinearization { omega_sq: f64 },
}

pub type Result<T> = std::result::Result<T, GaitError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> GaitError {
    GaitError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
