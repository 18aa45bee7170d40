//! Crate-wide error type. Variants carry enough context (op name, parameter
//! name, user id, line number) to make failures actionable without a debugger.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or size mismatch in a tensor op.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An API was used outside its contract (e.g. backward called twice).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Optimizer rejected an update, e.g. a non-finite gradient.
    #[error("optimizer error on parameter `{param}`: {detail}")]
    Optimizer { param: String, detail: String },

    /// Loss could not be computed for a user (e.g. zero-norm embedding).
    #[error("loss error for user {user_id}: {detail}")]
    Loss { user_id: u64, detail: String },

    /// Malformed input data; `line` is 1-based within the offending file.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted (e.g. a non-finite loss); the message carries the
    /// epoch, batch, and user ids involved.
    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
