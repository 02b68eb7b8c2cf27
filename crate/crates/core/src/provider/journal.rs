use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CallTag, CompletionRequest, CompletionResponse, ModuleName, Provider, ProviderError};

/// One provider call as seen by the run record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub tag: CallTag,
    /// SHA-256 over the request's system text, user text, sampling settings and tag.
    pub request_hash: String,
    pub system_text: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub provider_name: String,
    pub latency_ms: u64,
}

pub fn request_hash(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    for part in [
        req.system_text.as_str(),
        req.user_text.as_str(),
        &format!("{:?}", req.temperature),
        &req.max_tokens.to_string(),
        &req.tag.to_string(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Shared, append-only call log.
#[derive(Debug, Clone, Default)]
pub struct Journal(Arc<Mutex<Vec<JournalEntry>>>);

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<JournalEntry> {
        self.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    pub fn count(&self, module: ModuleName) -> usize {
        self.lock().iter().filter(|e| e.tag.module == module).count()
    }

    pub fn count_where(&self, pred: impl Fn(&JournalEntry) -> bool) -> usize {
        self.lock().iter().filter(|e| pred(e)).count()
    }

    fn record(&self, req: &CompletionRequest, result: &Result<CompletionResponse, ProviderError>, name: &str) {
        let mut entries = self.lock();
        let seq = entries.len() as u64;
        let (response, error, provider_name, latency_ms) = match result {
            Ok(r) => (Some(r.text.clone()), None, r.provider_name.clone(), r.latency_ms),
            Err(e) => (None, Some(e.to_string()), name.to_string(), 0),
        };
        entries.push(JournalEntry {
            seq,
            tag: req.tag.clone(),
            request_hash: request_hash(req),
            system_text: req.system_text.clone(),
            user_text: req.user_text.clone(),
            response,
            error,
            provider_name,
            latency_ms,
        });
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<JournalEntry>> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Wraps a provider and journals every call, failed ones included.
pub struct JournaledProvider<P> {
    inner: P,
    journal: Journal,
}

impl<P: Provider> JournaledProvider<P> {
    pub fn new(inner: P, journal: Journal) -> Self {
        Self { inner, journal }
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }
}

impl<P: Provider> Provider for JournaledProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let result = self.inner.complete(req);
        self.journal.record(req, &result, self.inner.name());
        result
    }
}
