use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gimbal lock: |R31| = {r31} is too close to 1 for Euler extraction")]
    GimbalLock { r31: f64 },

    #[error("tilt parameter rho = {rho} outside [-0.65, 0.65]")]
    TiltOutOfRange { rho: f64 },

    #[error("singular allocation: hover system condition number {cond:e} exceeds 1e12")]
    SingularAllocation { cond: f64 },

    #[error("rotor {index} speed {speed} rad/s is too close to zero for the decoupling matrix")]
    NearZeroRotorSpeed { index: usize, speed: f64 },

    #[error("singular decoupling matrix: condition number {cond:e} exceeds 1e12")]
    SingularDecoupling { cond: f64 },

    #[error("simulation diverged at t = {t} s: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Errors that arise while the vehicle is flying (as opposed to bad input).
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::GimbalLock { .. }
                | Error::SingularAllocation { .. }
                | Error::NearZeroRotorSpeed { .. }
                | Error::SingularDecoupling { .. }
                | Error::Diverged { .. }
        )
    }
}
