use thiserror::Error;

use crate::gaussian::ModeLabel;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("a state needs at least one mode")]
    EmptyState,
    #[error("duplicate mode label {0}")]
    DuplicateLabel(ModeLabel),
    #[error("unknown mode label {0}")]
    UnknownLabel(ModeLabel),
    #[error("mode {0} is not an output mode")]
    NotOutputMode(ModeLabel),
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("beam splitter coefficients are not unitary: t^2 + r^2 = {0}")]
    NotUnitary(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mode function norm is {0}, expected 1")]
    NotNormalized(f64),
    #[error("zero trigger probability, conditioning undefined")]
    ZeroTriggerProbability,
    #[error("above threshold: round-trip gain {0} >= 1")]
    AboveThreshold(f64),
    #[error("simulation window too short: {0}")]
    WindowTooShort(String),
    #[error("grid incompatibility: {0}")]
    Grid(String),
    #[error("truncated Fock space lost {0:e} of the trace")]
    TruncationLoss(f64),
    #[error("mode {0} holds no photons")]
    VacuumMode(usize),
    #[error("mixing matrix is not orthogonal (residual {0:e})")]
    NotOrthogonal(f64),
    #[error("optimizer did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("pump is identically zero")]
    ZeroPump,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}

pub(crate) fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<f64> {
    check_finite(what, value)?;
    if value < min || value > max {
        Err(Error::OutOfRange { what, value, min, max })
    } else {
        Ok(value)
    }
}
