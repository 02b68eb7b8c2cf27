use thiserror::Error;

/// Errors raised while building or validating domain values.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    #[error("invalid prompt bundle: {0}")]
    InvalidBundle(String),
    #[error("invalid agent profile: {0}")]
    InvalidProfile(String),
    #[error("empty message body from `{author}`")]
    EmptyMessage { author: String },
    #[error("turn index {next} does not follow {previous}")]
    TurnOrder { previous: u32, next: u32 },
    #[error("invalid violation record: {0}")]
    InvalidViolation(String),
}
