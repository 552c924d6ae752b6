use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::ChatBackend;
use super::cache::ResponseCache;
use super::ledger::{Outcome, QueryLedger, QueryRecord};
use super::prompt::{parse_response, token_estimate, Prompt};
use crate::error::{Error, Result};

/// Exponential backoff: attempt `k` (1-based) that fails waits
/// `base_delay_ms · factor^(k-1)` before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 1000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// The default attempt count with no waiting; for tests and local backends.
    pub fn immediate() -> Self {
        Self {
            base_delay_ms: 0,
            ..Self::default()
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }
}

/// Who a query is for, recorded alongside it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryContext {
    pub cluster: Option<usize>,
    pub node_id: Option<String>,
}

/// Backend plus retry policy, optional response cache, and ledger accounting.
pub struct LlmGateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    cache: Option<ResponseCache>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("backend", &self.backend.kind())
            .field("retry", &self.retry)
            .field("cache", &self.cache)
            .finish()
    }
}

impl LlmGateway {
    pub fn new(backend: Box<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            retry,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend_kind(&self) -> &'static str {
        self.backend.kind()
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Asks for one category. Every attempt lands in `ledger`; a cached
    /// response for the same prompt hash short-circuits the backend and is
    /// recorded with a zero token estimate.
    ///
    /// Returns the category and whether it lies outside the prompt's labels.
    pub fn query(&self, prompt: &Prompt, ctx: &QueryContext, ledger: &mut QueryLedger) -> Result<(String, bool)> {
        let hash = prompt.hash();
        let query = ledger.begin_query();
        let record = |attempt: u32, outcome: Outcome, latency: Duration| QueryRecord {
            query,
            attempt,
            cluster: ctx.cluster,
            node_id: ctx.node_id.clone(),
            prompt_hash: hash.clone(),
            outcome,
            raw_response: None,
            category: None,
            is_new: None,
            error: None,
            latency_ms: latency.as_secs_f64() * 1000.0,
            token_estimate: 0,
        };

        let cache = self.cache.as_ref().filter(|_| self.backend.cacheable());
        if let Some(cache) = cache {
            let start = Instant::now();
            if let Some(raw) = cache.get(&hash)? {
                if let Ok((category, is_new)) = parse_response(&raw, &prompt.categories) {
                    ledger.push(QueryRecord {
                        raw_response: Some(raw),
                        category: Some(category.clone()),
                        is_new: Some(is_new),
                        ..record(1, Outcome::CacheHit, start.elapsed())
                    });
                    return Ok((category, is_new));
                }
            }
        }

        let attempts = self.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let start = Instant::now();
            let result = self.backend.complete(prompt);
            let latency = start.elapsed();
            let parsed = result.and_then(|raw| parse_response(&raw, &prompt.categories).map(|p| (raw, p)));
            match parsed {
                Ok((raw, (category, is_new))) => {
                    if let Some(cache) = cache {
                        cache.put(&hash, &raw)?;
                    }
                    ledger.push(QueryRecord {
                        token_estimate: prompt.token_estimate() + token_estimate(&raw),
                        raw_response: Some(raw),
                        category: Some(category.clone()),
                        is_new: Some(is_new),
                        ..record(attempt, Outcome::Ok, latency)
                    });
                    return Ok((category, is_new));
                }
                Err(e) => {
                    last_error = e.to_string();
                    log::warn!("llm attempt {attempt}/{attempts} failed: {last_error}");
                    ledger.push(QueryRecord {
                        error: Some(last_error.clone()),
                        token_estimate: prompt.token_estimate(),
                        ..record(attempt, Outcome::Error, latency)
                    });
                    if attempt < attempts {
                        std::thread::sleep(self.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(Error::BackendFailure {
            attempts: attempts as usize,
            message: last_error,
        })
    }
}
