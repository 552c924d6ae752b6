//! LLM access for OOD exposure: the taxonomy prompt, response parsing,
//! backends (keyword oracle, remote chat service, replay cache), a response
//! cache keyed by prompt hash, retries, and a per-attempt query ledger.

mod backend;
mod cache;
mod gateway;
mod ledger;
mod prompt;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use backend::{
    make_keyword_oracle, ChatBackend, KeywordOracle, Permit, RateLimiter, RemoteChat, ReplayCache, ENV_API_KEY,
    ENV_ENDPOINT, ENV_MODEL,
};
pub use cache::ResponseCache;
pub use gateway::{LlmGateway, QueryContext, RetryPolicy};
pub use ledger::{Outcome, QueryLedger, QueryRecord};
pub use prompt::{build_prompt, normalize_category, parse_response, prompt_hash, text_block, token_estimate, Prompt};

use crate::error::Result;

/// Serializable choice of backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    KeywordOracle {
        rules: Vec<(String, String)>,
        fallback: String,
    },
    /// Endpoint and model may be overridden by the environment; the API key
    /// is read only from the environment.
    RemoteChatService {
        endpoint: Option<String>,
        model: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    ReplayCache {
        dir: PathBuf,
    },
}

fn default_timeout() -> u64 {
    60
}

/// Gateway settings: backend, retries and an optional on-disk response cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl LlmConfig {
    pub fn build(&self) -> Result<LlmGateway> {
        let backend: Box<dyn ChatBackend> = match &self.backend {
            BackendSpec::KeywordOracle { rules, fallback } => {
                Box::new(make_keyword_oracle(rules.clone(), fallback.clone())?)
            }
            BackendSpec::RemoteChatService {
                endpoint,
                model,
                timeout_secs,
            } => Box::new(RemoteChat::from_env(
                endpoint.as_deref(),
                model.as_deref(),
                Duration::from_secs(*timeout_secs),
            )?),
            BackendSpec::ReplayCache { dir } => Box::new(ReplayCache::new(ResponseCache::in_dir(dir)?)),
        };
        let mut gateway = LlmGateway::new(backend, self.retry);
        if let Some(dir) = &self.cache_dir {
            gateway = gateway.with_cache(ResponseCache::in_dir(dir)?);
        }
        Ok(gateway)
    }
}
