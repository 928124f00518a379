use thiserror::Error;

/// Errors raised by the model, integrator, protocol and statistics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in component {component}: {value}")]
    NonFinite { component: &'static str, value: f64 },

    #[error("negative value in component {component}: {value}")]
    Negative { component: &'static str, value: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("protocol parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("step size underflow at t = {t} days (h = {h:e}), state = {state:?}")]
    StepUnderflow { t: f64, h: f64, state: [f64; 5] },

    #[error("non-finite state at t = {t} days: {state:?}")]
    NonFiniteState { t: f64, state: [f64; 5] },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("dose events not sorted: event {index} at t = {t} precedes the current time {current}")]
    UnsortedEvents { index: usize, t: f64, current: f64 },

    #[error("patient {patient_id}: {source}")]
    Patient {
        patient_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::StepUnderflow { .. } | Error::NonFiniteState { .. } => true,
            Error::Patient { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
