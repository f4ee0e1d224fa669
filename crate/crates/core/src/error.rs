use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },
    #[error("empty superparameter interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("coefficient count mismatch: expected {expected}, got {got}")]
    CoefficientMismatch { expected: usize, got: usize },
    #[error("zero total photon counts")]
    ZeroCounts,
    #[error("readout counts are equal (R0 = R1); noise parameter is infinite")]
    InfiniteNoise,
    #[error("non-positive contrast ({0}); sensitivity is undefined")]
    NonPositiveContrast(f64),
    #[error("fit did not converge: {0}")]
    FitDiverged(String),
    #[error("sampling grid does not resolve {frequency_hz:.3e} Hz (Nyquist limit {nyquist_hz:.3e} Hz)")]
    UnderResolved { frequency_hz: f64, nyquist_hz: f64 },
    #[error("missing reference pi pulse")]
    MissingReference,
    #[error("objective evaluation failed: {0}")]
    Objective(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server rejected request{}: {message}", field.as_ref().map(|f| format!(" at `{f}`")).unwrap_or_default())]
    Remote { field: Option<String>, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        field,
        reason: reason.into(),
    }
}
