//! Chat-completion client and the cache-filling fetch loop.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{now_rfc3339, DescriptionCache};
use super::query::{build_query, parse_phrases};
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for the chat endpoint.
pub const TOKEN_ENV: &str = "DUALPT_LLM_TOKEN";

/// Example answer for "panda", served by [`MockTransport`].
pub const PANDA_PHRASES: [&str; 5] = [
    "Black and white fur pattern",
    "Round face with black eye patches",
    "Round body shape with short legs",
    "Distinctive thumb on front paws",
    "Large, furry ears",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Retry a failed request once.
    pub retry: bool,
    /// Upper bound on requests in flight.
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            retry: true,
            concurrency: 4,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body: `{model, temperature, messages: [{role: "user", content}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn user(model: &str, temperature: f64, content: String) -> Self {
        Self {
            model: model.to_owned(),
            temperature,
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
        }
    }
}

/// Network or HTTP-status failure.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            Some(code) => write!(f, "HTTP {code}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Sends one chat-completion request and returns the raw response body.
pub trait ChatTransport: Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, token: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            endpoint: endpoint.to_owned(),
            token,
        }
    }

    /// Reads the bearer token from [`TOKEN_ENV`].
    pub fn from_env(config: &ClientConfig) -> Self {
        Self::new(
            &config.endpoint,
            std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            Duration::from_secs(config.timeout_secs),
        )
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let Some(token) = &self.token else {
            return Err(TransportError {
                status: None,
                message: format!("{TOKEN_ENV} is not set"),
            });
        };
        let body = serde_json::to_string(request).map_err(|e| TransportError {
            status: None,
            message: e.to_string(),
        })?;
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .set("Authorization", &format!("Bearer {token}"))
            .send_string(&body);
        match response {
            Ok(r) => r.into_string().map_err(|e| TransportError {
                status: None,
                message: e.to_string(),
            }),
            Err(ureq::Error::Status(code, r)) => Err(TransportError {
                status: Some(code),
                message: r.status_text().to_owned(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError {
                status: None,
                message: t.to_string(),
            }),
        }
    }
}

/// Offline transport with canned answers; counts every call.
pub struct MockTransport {
    answers: BTreeMap<String, String>,
    fail_status: Option<u16>,
    calls: AtomicUsize,
}

impl Default for MockTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl MockTransport {
    /// Knows the panda answer; other classes get generic phrases.
    pub fn new() -> Self {
        let panda = PANDA_PHRASES
            .iter()
            .map(|p| format!("- {p}"))
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            answers: BTreeMap::from([("panda".to_owned(), panda)]),
            fail_status: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Every request fails with the given HTTP status.
    pub fn failing(status: u16) -> Self {
        Self {
            fail_status: Some(status),
            ..Self::new()
        }
    }

    pub fn with_answer(mut self, class_name: &str, answer: &str) -> Self {
        self.answers
            .insert(class_name.to_owned(), answer.to_owned());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn answer_for(&self, query: &str) -> String {
        let class = query
            .strip_prefix("Q: What are the useful features for distinguishing a ")
            .and_then(|rest| rest.split(" in a photo?").next())
            .unwrap_or(query);
        self.answers.get(class).cloned().unwrap_or_else(|| {
            format!(
                "- Overall shape of the {class}\n- Typical colors of the {class}\n\
                 - Surface texture of the {class}\n- Characteristic parts of the {class}"
            )
        })
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(status) = self.fail_status {
            return Err(TransportError {
                status: Some(status),
                message: "mock failure".into(),
            });
        }
        let query = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let body = json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": self.answer_for(query)}}]
        });
        Ok(body.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FetchSummary {
    pub fetched: usize,
    pub cached: usize,
}

enum Failure {
    Transport(String),
    Protocol(String),
}

fn content_of(body: &str) -> Result<String, String> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| "missing choices[0].message.content".to_owned())
}

fn fetch_one(
    class_name: &str,
    config: &ClientConfig,
    transport: &dyn ChatTransport,
) -> Result<Vec<String>, Failure> {
    let query = build_query(class_name).map_err(|e| Failure::Protocol(e.to_string()))?;
    let request = ChatRequest::user(&config.model, config.temperature, query);
    let attempts = if config.retry { 2 } else { 1 };
    let mut last = None;
    for _ in 0..attempts {
        match transport.send(&request) {
            Ok(body) => {
                let text = content_of(&body).map_err(Failure::Protocol)?;
                let phrases = parse_phrases(&text);
                if phrases.is_empty() {
                    return Err(Failure::Protocol("response contains no phrases".into()));
                }
                return Ok(phrases);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Failure::Transport(
        last.map(|e| e.to_string()).unwrap_or_default(),
    ))
}

/// Fills `cache_path` with phrases for every class not already cached.
///
/// Cached classes are never re-requested. On any failure the cache file is
/// left exactly as it was.
pub fn fetch_descriptions(
    classes: &[String],
    config: &ClientConfig,
    transport: &dyn ChatTransport,
    cache_path: &Path,
) -> Result<(DescriptionCache, FetchSummary)> {
    for name in classes {
        build_query(name)?;
    }
    let mut cache = DescriptionCache::load_or_new(cache_path, &config.model, config.temperature)?;
    let mut seen = HashSet::new();
    let wanted: Vec<&String> = classes.iter().filter(|c| seen.insert(c.as_str())).collect();
    let missing: Vec<&String> = wanted
        .iter()
        .copied()
        .filter(|c| !cache.contains(c))
        .collect();
    let summary = FetchSummary {
        fetched: missing.len(),
        cached: wanted.len() - missing.len(),
    };
    if missing.is_empty() {
        return Ok((cache, summary));
    }

    let workers = config.concurrency.clamp(1, missing.len());
    let mut results: Vec<Option<Result<Vec<String>, Failure>>> =
        (0..missing.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let missing = &missing;
                scope.spawn(move || {
                    (w..missing.len())
                        .step_by(workers)
                        .map(|i| (i, fetch_one(missing[i], config, transport)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("fetch worker panicked") {
                results[i] = Some(r);
            }
        }
    });

    let mut transport_failures = Vec::new();
    let mut first_message = None;
    let mut protocol_failure = None;
    let mut fetched = Vec::new();
    for (name, result) in missing.iter().zip(results) {
        match result.expect("every index is visited") {
            Ok(phrases) => fetched.push(((*name).clone(), phrases)),
            Err(Failure::Transport(msg)) => {
                transport_failures.push((*name).clone());
                first_message.get_or_insert(msg);
            }
            Err(Failure::Protocol(msg)) => {
                protocol_failure.get_or_insert(((*name).clone(), msg));
            }
        }
    }
    if !transport_failures.is_empty() {
        return Err(Error::Fetch {
            classes: transport_failures,
            message: first_message.unwrap_or_default(),
        });
    }
    if let Some((class, message)) = protocol_failure {
        return Err(Error::Protocol { class, message });
    }

    cache.classes.extend(fetched);
    cache.meta.model = config.model.clone();
    cache.meta.temperature = config.temperature;
    cache.meta.created = now_rfc3339();
    cache.save(cache_path)?;
    Ok((cache, summary))
}

/// [`fetch_descriptions`] over HTTP with the token from [`TOKEN_ENV`].
pub fn fetch_descriptions_http(
    classes: &[String],
    config: &ClientConfig,
    cache_path: &Path,
) -> Result<(DescriptionCache, FetchSummary)> {
    fetch_descriptions(
        classes,
        config,
        &HttpTransport::from_env(config),
        cache_path,
    )
}
