use thiserror::Error;

/// Errors raised by the certification engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("trajectory {index}: {message}")]
    InvalidTrajectory { index: usize, message: String },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("window of {requested} states exceeds the {available} available in history")]
    WindowExceedsHistory { requested: usize, available: usize },

    #[error("operation needs at least 2 actions, ensemble has {0}")]
    TooFewActions(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("oracle envelope exceeded: {0}")]
    EnvelopeExceeded(String),

    #[error("environment step out of range: state {state}, action {action}")]
    StepOutOfRange { state: usize, action: usize },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
