use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::prompt::{text_block, Prompt};
use crate::error::{Error, Result};

/// Anything that answers a taxonomy prompt with raw response text.
pub trait ChatBackend {
    fn kind(&self) -> &'static str;

    fn complete(&self, prompt: &Prompt) -> Result<String>;

    /// Whether gateway-level caching applies to this backend.
    fn cacheable(&self) -> bool {
        true
    }
}

/// Deterministic stand-in for a chat model: the first rule whose keyword
/// occurs as a whole word in the prompt's `[TEXT]` block names the category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordOracle {
    pub rules: Vec<(String, String)>,
    pub fallback: String,
}

pub fn make_keyword_oracle(rules: Vec<(String, String)>, fallback: impl Into<String>) -> Result<KeywordOracle> {
    for (k, c) in &rules {
        if k.trim().is_empty() || k != &k.to_lowercase() {
            return Err(Error::Config(format!("oracle keyword {k:?} must be non-empty and lowercase")));
        }
        if c.trim().is_empty() {
            return Err(Error::Config(format!("oracle rule for {k:?} has an empty category")));
        }
    }
    let fallback = fallback.into();
    if fallback.trim().is_empty() {
        return Err(Error::Config("oracle fallback category is empty".into()));
    }
    Ok(KeywordOracle { rules, fallback })
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    haystack.match_indices(needle).any(|(i, m)| {
        boundary(haystack[..i].chars().next_back()) && boundary(haystack[i + m.len()..].chars().next())
    })
}

impl KeywordOracle {
    pub fn classify(&self, text: &str) -> &str {
        let lower = text.to_lowercase();
        self.rules
            .iter()
            .find(|(k, _)| contains_word(&lower, k))
            .map_or(self.fallback.as_str(), |(_, c)| c.as_str())
    }
}

impl ChatBackend for KeywordOracle {
    fn kind(&self) -> &'static str {
        "keyword-oracle"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let text = text_block(&prompt.rendered_text).unwrap_or(&prompt.source_text);
        Ok(self.classify(text).to_string())
    }
}

/// Caps the number of requests in flight at once.
#[derive(Debug)]
pub struct RateLimiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a RateLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

impl RateLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("limiter lock")
    }
}

pub const ENV_ENDPOINT: &str = "LGPLUG_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "LGPLUG_LLM_MODEL";
pub const ENV_API_KEY: &str = "LGPLUG_LLM_API_KEY";

/// OpenAI-style `POST {endpoint}` chat completion with a single user message.
#[derive(Debug)]
pub struct RemoteChat {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

impl RemoteChat {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: ureq::Agent::new_with_config(config),
            limiter: RateLimiter::new(4),
        }
    }

    /// Reads endpoint, model and key from the environment; endpoint and model
    /// fall back to the given values when the variables are unset.
    pub fn from_env(endpoint: Option<&str>, model: Option<&str>, timeout: Duration) -> Result<Self> {
        let pick = |var: &str, given: Option<&str>| std::env::var(var).ok().or(given.map(str::to_string));
        let endpoint = pick(ENV_ENDPOINT, endpoint)
            .ok_or_else(|| Error::Config(format!("remote backend needs an endpoint ({ENV_ENDPOINT})")))?;
        let model =
            pick(ENV_MODEL, model).ok_or_else(|| Error::Config(format!("remote backend needs a model ({ENV_MODEL})")))?;
        Ok(Self::new(endpoint, model, std::env::var(ENV_API_KEY).ok(), timeout))
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = RateLimiter::new(n);
        self
    }
}

impl ChatBackend for RemoteChat {
    fn kind(&self) -> &'static str {
        "remote-chat-service"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let _permit = self.limiter.acquire();
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &prompt.rendered_text,
            }],
            temperature: 0.0,
        };
        let fail = |message: String| Error::BackendFailure { attempts: 1, message };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| fail(e.to_string()))?;
        let json: serde_json::Value = resp.body_mut().read_json().map_err(|e| fail(e.to_string()))?;
        json.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| fail(format!("response lacks choices[0].message.content: {json}")))
    }
}

/// Answers only from previously recorded responses.
#[derive(Debug)]
pub struct ReplayCache {
    cache: ResponseCache,
}

impl ReplayCache {
    pub fn new(cache: ResponseCache) -> Self {
        Self { cache }
    }
}

impl ChatBackend for ReplayCache {
    fn kind(&self) -> &'static str {
        "replay-cache"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        self.cache.get(&prompt.hash())?.ok_or_else(|| Error::BackendFailure {
            attempts: 1,
            message: format!("no recorded response for prompt {}", prompt.hash()),
        })
    }

    fn cacheable(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::build_prompt;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn rules(r: &[(&str, &str)]) -> Vec<(String, String)> {
        r.iter().map(|(k, c)| (k.to_string(), c.to_string())).collect()
    }

    fn ask(b: &dyn ChatBackend, text: &str) -> String {
        b.complete(&build_prompt("d", &["Theory".to_string()], text).unwrap()).unwrap()
    }

    #[test]
    fn oracle_examples() {
        let o = make_keyword_oracle(rules(&[("genetic", "Genetic Algorithms")]), "Other").unwrap();
        assert_eq!(ask(&o, "a genetic method"), "Genetic Algorithms");
        assert_eq!(ask(&o, "A GENETIC method"), "Genetic Algorithms");
        assert_eq!(ask(&o, "nothing here"), "Other");
        assert_eq!(ask(&o, "epigenetics"), "Other");
        let o = make_keyword_oracle(rules(&[("policy", "A"), ("reward", "B")]), "Other").unwrap();
        assert_eq!(ask(&o, "reward policy"), "A");
    }

    #[test]
    fn oracle_reads_only_text_block() {
        let o = make_keyword_oracle(rules(&[("theory", "T")]), "Other").unwrap();
        assert_eq!(ask(&o, "plain words"), "Other");
    }

    #[test]
    fn oracle_rejects_bad_rules() {
        assert!(make_keyword_oracle(rules(&[("Upper", "A")]), "x").is_err());
        assert!(make_keyword_oracle(rules(&[("", "A")]), "x").is_err());
        assert!(make_keyword_oracle(vec![], " ").is_err());
    }

    #[test]
    fn limiter_counts_permits() {
        let l = RateLimiter::new(2);
        let a = l.acquire();
        let _b = l.acquire();
        assert_eq!(l.in_flight(), 2);
        drop(a);
        assert_eq!(l.in_flight(), 1);
    }

    #[test]
    fn remote_chat_against_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = s.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(h) = text.find("\r\n\r\n") {
                    if text[..h].to_lowercase().contains("transfer-encoding: chunked") {
                        if text.ends_with("0\r\n\r\n") {
                            break;
                        }
                        continue;
                    }
                    let len: usize = text[..h]
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= h + 4 + len {
                        break;
                    }
                }
            }
            let body = r#"{"choices":[{"message":{"role":"assistant","content":"Quantum Topology\nbecause"}}]}"#;
            write!(
                s,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(buf).unwrap()
        });
        let remote = RemoteChat::new(format!("http://{addr}/v1/chat"), "m", Some("k".into()), Duration::from_secs(5));
        let out = ask(&remote, "some text");
        assert_eq!(out, "Quantum Topology\nbecause");
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat"));
        assert!(request.to_lowercase().contains("authorization: bearer k"));
        let body: serde_json::Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn remote_failure_is_backend_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let remote = RemoteChat::new(format!("http://{addr}/"), "m", None, Duration::from_secs(2));
        let p = build_prompt("d", &["A".to_string()], "x").unwrap();
        assert!(matches!(remote.complete(&p), Err(Error::BackendFailure { .. })));
    }
}
