use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    CacheKey, ChatRequest, ChatResponse, EmbeddingVector, LlmError, Provider, ProviderError,
    ResponseCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1),
    /// capped, but never shorter than a server-provided hint.
    pub fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(1u32 << (attempt - 1).min(16));
        exp.min(self.max_delay).max(hint.unwrap_or_default())
    }
}

/// Counting semaphore bounding concurrent provider calls.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

#[derive(Default)]
struct Counters {
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
}

/// Caching, retrying, rate-limited front end to a [`Provider`].
pub struct LlmClient {
    provider: Arc<dyn Provider>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    gate: Gate,
    min_interval: Option<Duration>,
    next_slot: Mutex<Instant>,
    counters: Counters,
}

#[derive(Serialize, Deserialize)]
struct CachedChat {
    text: String,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            cache: None,
            retry: RetryPolicy::default(),
            gate: Gate {
                free: Mutex::new(4),
                cv: Condvar::new(),
            },
            min_interval: None,
            next_slot: Mutex::new(Instant::now()),
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate.free = Mutex::new(n.max(1));
        self
    }

    /// Spaces provider calls at least `1 / per_second` apart.
    pub fn with_rate_limit(mut self, per_second: f64) -> Self {
        self.min_interval = (per_second > 0.0).then(|| Duration::from_secs_f64(1.0 / per_second));
        self
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            provider_calls: self.counters.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.bundle.rendered.trim().is_empty() {
            return Err(LlmError::EmptyInput("prompt"));
        }
        let name = self.provider.name().to_string();
        let key = CacheKey::chat(request, &name, self.provider.model_id());
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<CachedChat>(&key)) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ChatResponse {
                text: hit.text,
                provider: name,
                cached: true,
            });
        }
        let completion = self.dispatch(|| self.provider.complete(request))?;
        if completion.truncated {
            return Err(LlmError::Truncated {
                template: request.bundle.template_id,
            });
        }
        // Empty answers are not cached so that a retry reaches the provider.
        if let (Some(c), false) = (&self.cache, completion.text.trim().is_empty()) {
            c.put(
                &key,
                &CachedChat {
                    text: completion.text.clone(),
                },
            )?;
        }
        Ok(ChatResponse {
            text: completion.text,
            provider: name,
            cached: false,
        })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyInput("embedding input"));
        }
        let model = self.provider.embedding_model_id().to_string();
        let key = CacheKey::embedding(text, self.provider.name(), &model);
        let cached = self.cache.as_ref().and_then(|c| c.get::<Vec<f64>>(&key));
        let values = match cached {
            Some(v) => {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                v
            }
            None => {
                let v = self.dispatch(|| self.provider.embed(text))?;
                self.check_embedding(&v)?;
                if let Some(c) = &self.cache {
                    c.put(&key, &v)?;
                }
                v
            }
        };
        self.check_embedding(&values)?;
        Ok(EmbeddingVector {
            dim: values.len(),
            values,
            model_id: model,
        })
    }

    fn check_embedding(&self, v: &[f64]) -> Result<(), LlmError> {
        let expected = self.provider.embedding_dim();
        if v.len() != expected {
            return Err(LlmError::Dimension {
                expected,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LlmError::NonFinite);
        }
        Ok(())
    }

    fn wait_for_slot(&self) {
        let Some(interval) = self.min_interval else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn dispatch<T>(&self, call: impl Fn() -> Result<T, ProviderError>) -> Result<T, LlmError> {
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                self.wait_for_slot();
                self.counters.provider_calls.fetch_add(1, Ordering::Relaxed);
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(ProviderError::Transient {
                    message,
                    retry_after,
                }) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            last: ProviderError::Transient {
                                message,
                                retry_after,
                            },
                        });
                    }
                    let delay = self.retry.delay(attempt, retry_after);
                    log::warn!("transient provider failure (attempt {attempt}): {message}; retrying in {delay:?}");
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(LlmError::Provider(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts::{bindings, render_prompt};
    use crate::llm::{Completion, TemplateId};
    use std::sync::atomic::AtomicUsize;

    /// Fails transiently a fixed number of times, then echoes the sample index.
    struct Flaky {
        failures: AtomicUsize,
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
        auth: bool,
        truncate: bool,
    }

    impl Flaky {
        fn new(failures: usize) -> Self {
            Self {
                failures: AtomicUsize::new(failures),
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                auth: false,
                truncate: false,
            }
        }
    }

    impl Provider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn model_id(&self) -> &str {
            "m"
        }
        fn embedding_model_id(&self) -> &str {
            "e"
        }
        fn embedding_dim(&self) -> usize {
            2
        }
        fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            if self.auth {
                return Err(ProviderError::Auth("bad key".into()));
            }
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderError::Transient {
                    message: "503".into(),
                    retry_after: None,
                });
            }
            Ok(Completion {
                text: format!("sample {}", request.sample_index),
                truncated: self.truncate,
            })
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
            if text == "wrong" {
                return Ok(vec![1.0]);
            }
            Ok(vec![1.0, text.len() as f64])
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    fn req(sample: u32) -> ChatRequest {
        ChatRequest::new(
            render_prompt(TemplateId::DescribeQuery, bindings([("query", "SELECT 1")])).unwrap(),
            0.7,
            sample,
        )
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1, None), Duration::from_millis(500));
        assert_eq!(p.delay(2, None), Duration::from_millis(1000));
        assert_eq!(p.delay(10, None), Duration::from_secs(8));
        assert_eq!(
            p.delay(1, Some(Duration::from_secs(2))),
            Duration::from_secs(2)
        );
    }

    #[test]
    fn retries_transient_failures() {
        let p = Arc::new(Flaky::new(2));
        let client = LlmClient::new(p.clone()).with_retry(fast());
        assert_eq!(client.chat(&req(0)).unwrap().text, "sample 0");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        assert_eq!(client.stats().retries, 2);

        let p = Arc::new(Flaky::new(5));
        let client = LlmClient::new(p).with_retry(fast());
        assert!(matches!(
            client.chat(&req(0)),
            Err(LlmError::RetriesExhausted { attempts: 3, .. })
        ));
    }

    #[test]
    fn auth_and_truncation_are_not_retried() {
        let p = Arc::new(Flaky {
            auth: true,
            ..Flaky::new(0)
        });
        let client = LlmClient::new(p.clone()).with_retry(fast());
        assert!(client.chat(&req(0)).unwrap_err().is_auth());
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);

        let client = LlmClient::new(Arc::new(Flaky {
            truncate: true,
            ..Flaky::new(0)
        }));
        assert!(matches!(
            client.chat(&req(0)),
            Err(LlmError::Truncated { .. })
        ));
    }

    #[test]
    fn second_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let p = Arc::new(Flaky::new(0));
        let client = LlmClient::new(p.clone()).with_cache(ResponseCache::new(dir.path()).unwrap());
        let first = client.chat(&req(0)).unwrap();
        let second = client.chat(&req(0)).unwrap();
        assert!(!first.cached && second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
        // different sample index, different entry
        assert_eq!(client.chat(&req(1)).unwrap().text, "sample 1");
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn in_flight_bound_is_respected() {
        let p = Arc::new(Flaky::new(0));
        let client = LlmClient::new(p.clone()).with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let client = &client;
                s.spawn(move || client.chat(&req(i)).unwrap());
            }
        });
        assert!(p.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(p.calls.load(Ordering::SeqCst), 8);
    }

    #[test]
    fn rate_limit_spaces_calls() {
        let client = LlmClient::new(Arc::new(Flaky::new(0))).with_rate_limit(100.0);
        let start = Instant::now();
        for i in 0..4 {
            client.chat(&req(i)).unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn embeddings_are_checked() {
        let client = LlmClient::new(Arc::new(Flaky::new(0)));
        assert_eq!(client.embed("abc").unwrap().values, vec![1.0, 3.0]);
        assert!(matches!(
            client.embed("wrong"),
            Err(LlmError::Dimension {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(client.embed("  "), Err(LlmError::EmptyInput(_))));
    }
}
