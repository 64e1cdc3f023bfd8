use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("element {element} has non-positive Jacobian determinant {det:e}")]
    InvertedElement { element: usize, det: f64 },

    #[error("singular system ({context})")]
    Singular { context: String },

    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e} ({context})")]
    NotConverged {
        residual: f64,
        tolerance: f64,
        context: String,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("frequency {freq_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    Nyquist { freq_hz: f64, nyquist_hz: f64 },

    #[error("invalid band [{low_hz}, {high_hz}] Hz (Nyquist {nyquist_hz} Hz)")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },

    #[error("trace too short: need at least {needed} samples, got {len}")]
    TraceTooShort { needed: usize, len: usize },

    #[error("parameters are for {got} afferents but {expected} was required")]
    AfferentMismatch { expected: String, got: String },

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error(
        "analysis window [{start_ms}, {end_ms}) ms exceeds simulated duration {duration_ms} ms"
    )]
    WindowOverrun {
        start_ms: f64,
        end_ms: f64,
        duration_ms: f64,
    },

    #[error("degenerate regression input: {0}")]
    DegenerateRegression(String),

    #[error("missing stress traces for conditions: {}", .0.join(", "))]
    MissingConditions(Vec<String>),

    #[error("objective evaluation failed for candidate {candidate:?}: {reason}")]
    Evaluation { candidate: Vec<f64>, reason: String },

    #[error("Pareto front is empty")]
    EmptyFront,

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (singular systems, inverted
    /// elements, non-finite values) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::InvertedElement { .. }
            | Error::Singular { .. }
            | Error::NotConverged { .. }
            | Error::NonFinite { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            Error::Evaluation { .. } => true,
            _ => false,
        }
    }
}
