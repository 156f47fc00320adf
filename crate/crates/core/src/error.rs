use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("frequencies ({nu1} MHz, {nu2} MHz) are not on the upper resonance branch: splitting off by {deviation:.3} MHz")]
    RegimeViolation { nu1: f64, nu2: f64, deviation: f64 },

    #[error("calibration response has no sign change over the sweep")]
    NoMonotoneInterval,

    #[error("signal {signal} lies outside the calibrated range [{lo}, {hi}]")]
    OutOfRange { signal: f64, lo: f64, hi: f64 },

    #[error("degenerate geometry: distance {0} must be positive")]
    DegenerateGeometry(f64),

    #[error("array shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty region of interest")]
    EmptyRoi,

    #[error("fit did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("spectrum is flat within noise")]
    DegenerateSpectrum,

    #[error("profile has no sign change; wire position is ambiguous")]
    SignAmbiguity,

    #[error("protocol mismatch: stack is `{stack}`, calibration is `{curve}`")]
    ProtocolMismatch { stack: String, curve: String },

    #[error("no reference profile available for current inference")]
    NoReference,
}

pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason.into() })
    }
}
