//! Chat-completion backend for pairwise entanglement scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::KnowledgeBackend;
use crate::error::{Error, Result};
use crate::types::ClassRegistry;

const SYSTEM_PROMPT: &str =
    "You are an experienced radiologist. You answer with a single JSON object and no other text.";

const USER_TEMPLATE: &str = "\
In a chest radiograph that shows both findings of a pair, how likely is it that \
the two lesions occupy overlapping image regions, so that removing one would \
also remove visible evidence of the other?

Rate each pair below on a scale from 0 (never overlap) to 1 (almost always overlap).

Pairs, one per line, as \"A|B\":
{pairs}

Reply with one JSON object whose keys are exactly the pair strings above and \
whose values are numbers between 0 and 1.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of an OpenAI-style chat completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Minimum spacing between outgoing requests.
    pub min_interval_ms: u64,
    pub timeout_s: u64,
    pub cache_path: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_retries: 3,
            backoff_ms: 1000,
            min_interval_ms: 500,
            timeout_s: 60,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

/// Sends one chat request and returns the assistant message text.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &LlmConfig) -> Self {
        let api_key = config.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        Self {
            endpoint: config.endpoint.clone(),
            api_key,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| Error::Backend(format!("request to {} failed: {e}", self.endpoint)))?;
        let body: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("malformed completion response: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Backend("completion response has no choices".into()))
    }
}

pub fn pair_key(head: &str, tail: &str) -> String {
    format!("{head}|{tail}")
}

pub fn render_prompt(pairs: &[(String, String)]) -> String {
    let lines: Vec<String> = pairs.iter().map(|(h, t)| pair_key(h, t)).collect();
    USER_TEMPLATE.replace("{pairs}", &lines.join("\n"))
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses a reply into one score per requested pair. The reply must be a JSON
/// object (optionally inside a code fence) holding every requested key.
pub fn parse_reply(raw: &str, pairs: &[(String, String)]) -> Result<Vec<f64>> {
    let fail = |message: String| Error::Parse {
        message,
        raw: raw.to_owned(),
    };
    let obj: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(strip_fence(raw)).map_err(|e| fail(format!("reply is not a JSON object: {e}")))?;
    pairs
        .iter()
        .map(|(h, t)| {
            let key = pair_key(h, t);
            let v = obj
                .get(&key)
                .ok_or_else(|| fail(format!("reply lacks key {key:?}")))?
                .as_f64()
                .ok_or_else(|| fail(format!("value for {key:?} is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(fail(format!("value {v} for {key:?} is outside [0, 1]")));
            }
            Ok(v)
        })
        .collect()
}

/// Queries a chat model, caching every answer by (model, pair).
pub struct LlmBackend<T> {
    config: LlmConfig,
    transport: T,
    cache: RwLock<BTreeMap<String, f64>>,
    last_request: Mutex<Option<Instant>>,
}

impl LlmBackend<HttpTransport> {
    pub fn http(config: LlmConfig) -> Result<Self> {
        let transport = HttpTransport::new(&config);
        Self::with_transport(config, transport)
    }
}

impl<T: Transport> LlmBackend<T> {
    pub fn with_transport(config: LlmConfig, transport: T) -> Result<Self> {
        let cache = match &config.cache_path {
            Some(p) if p.exists() => load_cache(p)?,
            _ => BTreeMap::new(),
        };
        Ok(Self {
            config,
            transport,
            cache: RwLock::new(cache),
            last_request: Mutex::new(None),
        })
    }

    fn cache_key(&self, head: &str, tail: &str) -> String {
        format!("{}::{}", self.config.model, pair_key(head, tail))
    }

    pub fn cached(&self, head: &str, tail: &str) -> Option<f64> {
        self.cache
            .read()
            .expect("cache lock")
            .get(&self.cache_key(head, tail))
            .copied()
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().expect("limiter lock");
        let gap = Duration::from_millis(self.config.min_interval_ms);
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < gap {
                thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn request(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            temperature: 0.0,
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: SYSTEM_PROMPT.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: render_prompt(pairs),
                },
            ],
        };
        let mut attempt = 0;
        let raw = loop {
            self.throttle();
            match self.transport.complete(&request) {
                Ok(text) => break text,
                Err(e) if attempt < self.config.max_retries => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("entanglement query failed ({e}); retrying in {wait} ms");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => {
                    return Err(Error::Backend(format!(
                        "entanglement query failed after {} attempts: {e}",
                        attempt + 1
                    )))
                }
            }
        };
        parse_reply(&raw, pairs)
    }

    fn persist(&self) -> Result<()> {
        if let Some(p) = &self.config.cache_path {
            let cache = self.cache.read().expect("cache lock");
            fs::write(p, serde_json::to_string_pretty(&*cache)?)?;
        }
        Ok(())
    }
}

fn load_cache(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_owned(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

impl<T: Transport> KnowledgeBackend for LlmBackend<T> {
    fn name(&self) -> String {
        format!("llm:{}", self.config.model)
    }

    fn query(&self, registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let named: Vec<(String, String)> = pairs
            .iter()
            .map(|(h, t)| Ok((name(registry, *h)?, name(registry, *t)?)))
            .collect::<Result<_>>()?;
        let missing: Vec<(String, String)> = named
            .iter()
            .filter(|(h, t)| self.cached(h, t).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            let scores = self.request(&missing)?;
            {
                let mut cache = self.cache.write().expect("cache lock");
                for ((h, t), s) in missing.iter().zip(scores) {
                    cache.insert(self.cache_key(h, t), s);
                }
            }
            self.persist()?;
        }
        Ok(named
            .iter()
            .map(|(h, t)| self.cached(h, t).expect("just cached"))
            .collect())
    }
}

fn name(registry: &ClassRegistry, index: usize) -> Result<String> {
    registry
        .name(index)
        .map(str::to_owned)
        .ok_or_else(|| Error::arg(format!("class index {index} is not in the registry")))
}
