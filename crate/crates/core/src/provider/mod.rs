//! Text-generation backends.
//!
//! The engine talks to a [`Provider`] and never cares which one it is: the
//! [`HttpProvider`] speaks the OpenAI-compatible chat-completions protocol,
//! the [`ScriptedProvider`] replays a [`ScriptBook`].

mod http;
mod journal;
mod retry;
mod scripted;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpConfig, HttpProvider, API_KEY_ENV};
pub use journal::{request_hash, Journal, JournalEntry, JournaledProvider};
pub use retry::{with_retry, RetryPolicy, RetryingProvider, Sleeper, ThreadSleeper};
pub use scripted::{ScriptBook, ScriptEntry, ScriptPattern, ScriptedProvider};

/// Which part of the simulation issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleName {
    Dialogue,
    CompressHistory,
    CompressLog,
    ReflectRegulations,
    ReflectGuidance,
    Plan,
    Interview,
    Review,
    Judge,
}

impl ModuleName {
    pub const ALL: [ModuleName; 9] = [
        ModuleName::Dialogue,
        ModuleName::CompressHistory,
        ModuleName::CompressLog,
        ModuleName::ReflectRegulations,
        ModuleName::ReflectGuidance,
        ModuleName::Plan,
        ModuleName::Interview,
        ModuleName::Review,
        ModuleName::Judge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleName::Dialogue => "dialogue",
            ModuleName::CompressHistory => "compress_history",
            ModuleName::CompressLog => "compress_log",
            ModuleName::ReflectRegulations => "reflect_regulations",
            ModuleName::ReflectGuidance => "reflect_guidance",
            ModuleName::Plan => "plan",
            ModuleName::Interview => "interview",
            ModuleName::Review => "review",
            ModuleName::Judge => "judge",
        }
    }
}

impl fmt::Display for ModuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModuleName::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown module `{s}`"))
    }
}

/// Structured label attached to every request; used for script lookup and
/// for the run journal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub agent_id: String,
    pub module: ModuleName,
    pub round_index: u32,
    pub turn_index: u32,
}

impl CallTag {
    pub fn new(agent_id: impl Into<String>, module: ModuleName, round_index: u32, turn_index: u32) -> Self {
        Self { agent_id: agent_id.into(), module, round_index, turn_index }
    }
}

impl fmt::Display for CallTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/round {}/turn {}", self.agent_id, self.module, self.round_index, self.turn_index)
    }
}

/// Sampling settings for one kind of caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Sampling {
    pub const PARTICIPANT: Sampling = Sampling { temperature: 0.7, max_tokens: 512 };
    pub const SUPERVISOR: Sampling = Sampling { temperature: 0.0, max_tokens: 256 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: CallTag,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, sampling: Sampling, tag: CallTag) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            tag,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("user text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub provider_name: String,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider reply: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("no script entry matches {tag} and no default response is set")]
    ScriptMiss { tag: String },
    #[error("every script entry matching {tag} is exhausted and no default response is set")]
    ScriptExhausted { tag: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Server { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(req)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> CompletionRequest {
        CompletionRequest {
            system_text: String::new(),
            user_text: "hi".into(),
            temperature: 0.7,
            max_tokens: 16,
            tag: CallTag::new("a", ModuleName::Dialogue, 0, 0),
        }
    }

    #[test]
    fn request_validation() {
        assert!(req().validate().is_ok());
        let mut r = req();
        r.user_text = " ".into();
        assert!(r.validate().is_err());
        let mut r = req();
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        let mut r = req();
        r.max_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn retryable_classification() {
        assert!(ProviderError::Timeout.is_retryable());
        assert!(ProviderError::Server { status: 503, body: String::new() }.is_retryable());
        assert!(ProviderError::Server { status: 429, body: String::new() }.is_retryable());
        assert!(!ProviderError::Server { status: 400, body: String::new() }.is_retryable());
        assert!(!ProviderError::Auth("bad key".into()).is_retryable());
    }

    #[test]
    fn module_names_round_trip() {
        for m in ModuleName::ALL {
            assert_eq!(m.as_str().parse::<ModuleName>().unwrap(), m);
        }
    }
}
