use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, base_delay: Duration, multiplier: f64) -> Self {
        Self { max_attempts, base_delay_ms: base_delay.as_millis() as u64, multiplier }
    }

    /// Delay slept after failed attempt `k` (0-based) before attempt `k + 1`.
    pub fn delay_after(&self, k: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.multiplier.powi(k as i32);
        Duration::from_millis(ms.round() as u64)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, delay: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

/// Calls `provider` up to `policy.max_attempts` times, backing off between
/// retryable failures. Non-retryable errors surface immediately.
pub fn with_retry<P: Provider + ?Sized>(
    provider: &P,
    req: &CompletionRequest,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<CompletionResponse, ProviderError> {
    if policy.max_attempts == 0 {
        return Err(ProviderError::Config("retry policy needs at least one attempt".into()));
    }
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.complete(req) {
            Ok(resp) => return Ok(resp),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempt >= policy.max_attempts => {
                return Err(ProviderError::RetriesExhausted { attempts: attempt, last: Box::new(e) })
            }
            Err(_) => sleeper.sleep(policy.delay_after(attempt - 1)),
        }
    }
}

pub struct RetryingProvider<P> {
    inner: P,
    policy: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
}

impl<P: Provider> RetryingProvider<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy, sleeper: Box::new(ThreadSleeper) }
    }

    pub fn with_sleeper(inner: P, policy: RetryPolicy, sleeper: Box<dyn Sleeper>) -> Self {
        Self { inner, policy, sleeper }
    }
}

impl<P: Provider> Provider for RetryingProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        with_retry(&self.inner, req, &self.policy, self.sleeper.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::provider::{CallTag, ModuleName};

    /// Fails with the queued errors in order, then succeeds.
    struct FaultyBackend {
        faults: Mutex<Vec<ProviderError>>,
        calls: Mutex<u32>,
    }

    impl FaultyBackend {
        fn new(faults: Vec<ProviderError>) -> Self {
            Self { faults: Mutex::new(faults), calls: Mutex::new(0) }
        }

        fn calls(&self) -> u32 {
            *self.calls.lock().unwrap()
        }
    }

    impl Provider for FaultyBackend {
        fn name(&self) -> &str {
            "faulty"
        }

        fn complete(&self, _req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
            *self.calls.lock().unwrap() += 1;
            let mut faults = self.faults.lock().unwrap();
            if faults.is_empty() {
                Ok(CompletionResponse { text: "ok".into(), provider_name: "faulty".into(), latency_ms: 0 })
            } else {
                Err(faults.remove(0))
            }
        }
    }

    #[derive(Default)]
    struct RecordingSleeper(Mutex<Vec<Duration>>);

    impl Sleeper for RecordingSleeper {
        fn sleep(&self, delay: Duration) {
            self.0.lock().unwrap().push(delay);
        }
    }

    fn req() -> CompletionRequest {
        CompletionRequest {
            system_text: String::new(),
            user_text: "x".into(),
            temperature: 0.0,
            max_tokens: 8,
            tag: CallTag::new("a", ModuleName::Dialogue, 0, 0),
        }
    }

    fn server_error() -> ProviderError {
        ProviderError::Server { status: 503, body: "busy".into() }
    }

    #[test]
    fn succeeds_on_third_attempt_with_backoff() {
        let backend = FaultyBackend::new(vec![server_error(), ProviderError::Timeout]);
        let sleeper = RecordingSleeper::default();
        let policy = RetryPolicy::new(3, Duration::from_millis(100), 2.0);
        let resp = with_retry(&backend, &req(), &policy, &sleeper).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(backend.calls(), 3);
        assert_eq!(*sleeper.0.lock().unwrap(), vec![Duration::from_millis(100), Duration::from_millis(200)]);
    }

    #[test]
    fn single_attempt_success() {
        let backend = FaultyBackend::new(vec![]);
        let sleeper = RecordingSleeper::default();
        let policy = RetryPolicy::new(1, Duration::from_millis(100), 2.0);
        with_retry(&backend, &req(), &policy, &sleeper).unwrap();
        assert_eq!(backend.calls(), 1);
        assert!(sleeper.0.lock().unwrap().is_empty());
    }

    #[test]
    fn exhaustion_reports_attempt_count() {
        let backend = FaultyBackend::new(vec![server_error(), server_error(), server_error()]);
        let sleeper = RecordingSleeper::default();
        let policy = RetryPolicy::new(2, Duration::from_millis(10), 2.0);
        let err = with_retry(&backend, &req(), &policy, &sleeper).unwrap_err();
        assert!(matches!(err, ProviderError::RetriesExhausted { attempts: 2, .. }), "{err:?}");
        assert_eq!(backend.calls(), 2);
        assert_eq!(sleeper.0.lock().unwrap().len(), 1);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let backend = FaultyBackend::new(vec![ProviderError::Auth("401".into())]);
        let sleeper = RecordingSleeper::default();
        let err = with_retry(&backend, &req(), &RetryPolicy::default(), &sleeper).unwrap_err();
        assert!(matches!(err, ProviderError::Auth(_)));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn zero_attempts_rejected() {
        let backend = FaultyBackend::new(vec![]);
        let policy = RetryPolicy::new(0, Duration::from_millis(1), 2.0);
        assert!(with_retry(&backend, &req(), &policy, &ThreadSleeper).is_err());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn default_policy_delays() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_after(0), Duration::from_millis(500));
        assert_eq!(p.delay_after(1), Duration::from_millis(1000));
    }
}
