use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CallTag, CompletionRequest, CompletionResponse, ModuleName, Provider, ProviderError};

/// Tag pattern; `None` fields are wildcards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptPattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<ModuleName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u32>,
}

impl ScriptPattern {
    pub fn matches(&self, tag: &CallTag) -> bool {
        self.agent.as_ref().is_none_or(|a| *a == tag.agent_id)
            && self.module.is_none_or(|m| m == tag.module)
            && self.round.is_none_or(|r| r == tag.round_index)
            && self.turn.is_none_or(|t| t == tag.turn_index)
    }

    /// Number of pinned fields.
    pub fn specificity(&self) -> usize {
        [self.agent.is_some(), self.module.is_some(), self.round.is_some(), self.turn.is_some()]
            .into_iter()
            .filter(|&pinned| pinned)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub pattern: ScriptPattern,
    pub responses: Vec<String>,
    /// Keep answering with the last response once the queue runs dry.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat_last: bool,
}

/// Deterministic response script.
///
/// Lookup picks, among the entries whose pattern matches the tag and whose
/// queue still has a response, the one with the most pinned fields; ties go
/// to the entry declared first. With no such entry the default response is
/// used, and without a default the call fails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptBook {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl ScriptBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn push(&mut self, pattern: ScriptPattern, responses: impl IntoIterator<Item = impl Into<String>>) {
        self.entries.push(ScriptEntry {
            pattern,
            responses: responses.into_iter().map(Into::into).collect(),
            repeat_last: false,
        });
    }

    pub fn push_repeating(&mut self, pattern: ScriptPattern, response: impl Into<String>) {
        self.entries.push(ScriptEntry { pattern, responses: vec![response.into()], repeat_last: true });
    }

    /// Shorthand for an entry pinned on all four tag fields.
    pub fn exact(&mut self, agent: &str, module: ModuleName, round: u32, turn: u32, response: impl Into<String>) {
        self.push(
            ScriptPattern {
                agent: Some(agent.to_string()),
                module: Some(module),
                round: Some(round),
                turn: Some(turn),
            },
            [response.into()],
        );
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ProviderError> {
        toml::from_str(text).map_err(|e| ProviderError::Config(format!("script book: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::Config(format!("script book: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("script book always serializes")
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|ext| ext == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

/// Replays a [`ScriptBook`]. Each call consumes exactly one queued response.
#[derive(Debug)]
pub struct ScriptedProvider {
    book: ScriptBook,
    cursors: Mutex<Vec<usize>>,
}

impl ScriptedProvider {
    pub fn new(book: ScriptBook) -> Self {
        let cursors = Mutex::new(vec![0; book.entries.len()]);
        Self { book, cursors }
    }

    pub fn book(&self) -> &ScriptBook {
        &self.book
    }

    /// Rewinds every queue to its start.
    pub fn reset(&self) {
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        cursors.iter_mut().for_each(|c| *c = 0);
    }

    fn next_response(&self, tag: &CallTag) -> Result<String, ProviderError> {
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        let mut any_match = false;
        let mut best: Option<usize> = None;
        for (i, entry) in self.book.entries.iter().enumerate() {
            if !entry.pattern.matches(tag) {
                continue;
            }
            any_match = true;
            let available = cursors[i] < entry.responses.len() || (entry.repeat_last && !entry.responses.is_empty());
            if !available {
                continue;
            }
            let better = best.is_none_or(|b| entry.pattern.specificity() > self.book.entries[b].pattern.specificity());
            if better {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            let entry = &self.book.entries[i];
            let at = cursors[i].min(entry.responses.len() - 1);
            cursors[i] += 1;
            return Ok(entry.responses[at].clone());
        }
        match (&self.book.default, any_match) {
            (Some(text), _) => Ok(text.clone()),
            (None, true) => Err(ProviderError::ScriptExhausted { tag: tag.to_string() }),
            (None, false) => Err(ProviderError::ScriptMiss { tag: tag.to_string() }),
        }
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let text = self.next_response(&req.tag)?;
        Ok(CompletionResponse { text, provider_name: self.name().to_string(), latency_ms: 0 })
    }
}
