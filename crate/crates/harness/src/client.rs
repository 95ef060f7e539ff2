//! OpenAI-compatible chat-completions client with retry.

use std::future::Future;
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::prompt::{Message, Part, Role};

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("authentication failed (HTTP {status}): {body}")]
    AuthFailure { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("configuration: {0}")]
    Config(String),
}

/// Exponential backoff with jitter: attempt `n` waits a uniform draw from
/// `[d/2, d]` where `d = min(cap, base * 2^(n-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 6,
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the wait after failed attempt `attempt` (1-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let d = self.ceiling(attempt);
        d.mul_f64(rng.gen_range(0.5..=1.0))
    }
}

fn default_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}

fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

fn default_timeout() -> u64 {
    120
}

fn default_base_ms() -> u64 {
    1000
}

fn default_cap_ms() -> u64 {
    60_000
}

/// Endpoint settings, usually read from a TOML file:
///
/// ```toml
/// url = "https://api.openai.com/v1/chat/completions"
/// model = "gpt-4o-mini"
/// api_key_env = "OPENAI_API_KEY"
/// temperature = 0.0
/// max_tokens = 1024
/// max_attempts = 6
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset means no
    /// `Authorization` header.
    #[serde(default = "default_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_cap_ms")]
    pub backoff_cap_ms: u64,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            temperature: None,
            max_tokens: None,
            max_attempts: default_attempts(),
            timeout_secs: default_timeout(),
            backoff_base_ms: default_base_ms(),
            backoff_cap_ms: default_cap_ms(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ChatError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ChatError::Config(e.to_string()))?;
        if cfg.max_attempts == 0 {
            return Err(ChatError::Config("max_attempts must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ChatError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChatError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base: Duration::from_millis(self.backoff_base_ms),
            cap: Duration::from_millis(self.backoff_cap_ms),
        }
    }
}

/// A request tagged with the id of the task it serves.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub tag: String,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub attempts: u32,
}

pub trait ChatClient: Send + Sync {
    /// Model id recorded alongside results.
    fn model(&self) -> &str;

    /// Sampling settings recorded alongside results.
    fn temperature(&self) -> Option<f64> {
        None
    }

    fn max_tokens(&self) -> Option<u32> {
        None
    }

    fn complete(
        &self,
        request: &ChatRequest,
    ) -> impl Future<Output = Result<ChatResponse, ChatError>> + Send;
}

/// Messages in the chat-completions wire format. Images travel as base64
/// data URLs.
pub fn wire_messages(messages: &[Message]) -> Value {
    let role = |r: Role| match r {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    Value::Array(
        messages
            .iter()
            .map(|m| {
                let only_text = m.parts.iter().all(|p| matches!(p, Part::Text(_)));
                let content = if only_text && m.role != Role::User {
                    Value::String(m.text_content())
                } else {
                    Value::Array(
                        m.parts
                            .iter()
                            .map(|p| match p {
                                Part::Text(t) => json!({"type": "text", "text": t}),
                                Part::Image(a) => {
                                    json!({"type": "image_url", "image_url": {"url": a.data_url()}})
                                }
                            })
                            .collect(),
                    )
                };
                json!({"role": role(m.role), "content": content})
            })
            .collect(),
    )
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<Value>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Pull the assistant text and token usage out of a response body.
pub fn parse_response(body: &str) -> Result<ChatResponse, ChatError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| ChatError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ChatError::MalformedResponse("no choices".into()))?;
    let text = match choice.message.content {
        Some(Value::String(s)) => s,
        // Some servers return content parts even for plain replies.
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => {
            return Err(ChatError::MalformedResponse(format!(
                "unexpected content {other}"
            )))
        }
    };
    let usage = wire.usage;
    Ok(ChatResponse {
        text,
        prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
        completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        attempts: 1,
    })
}

pub struct HttpChatClient {
    config: EndpointConfig,
    api_key: Option<String>,
    http: reqwest::Client,
}

impl HttpChatClient {
    /// Build a client, reading the API key from the configured environment
    /// variable.
    pub fn new(config: EndpointConfig) -> Result<Self, ChatError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ChatError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: EndpointConfig, api_key: Option<String>) -> Result<Self, ChatError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ChatError::Config(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            http,
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": wire_messages(&request.messages),
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(String, Option<Duration>),
    Fail(ChatError),
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let secs: f64 = headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse()
        .ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl HttpChatClient {
    async fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.http.post(&self.config.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry(e.to_string(), None)
            }
            Err(e) => return Attempt::Fail(ChatError::Config(e.to_string())),
        };
        let status = resp.status().as_u16();
        let wait = retry_after(resp.headers());
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string(), None),
        };
        match status {
            200..=299 => match parse_response(&text) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(ChatError::AuthFailure { status, body: text }),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {text}"), wait),
            _ => Attempt::Fail(ChatError::Rejected { status, body: text }),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn temperature(&self) -> Option<f64> {
        self.config.temperature
    }

    fn max_tokens(&self) -> Option<u32> {
        self.config.max_tokens
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let body = self.body(request);
        let policy = self.config.retry();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body).await {
                Attempt::Done(mut r) => {
                    r.attempts = attempts;
                    return Ok(r);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(last, server_wait) => {
                    if attempts >= policy.max_attempts {
                        return Err(ChatError::ExhaustedRetries { attempts, last });
                    }
                    let jittered = policy.delay(attempts, &mut rand::thread_rng());
                    let wait = server_wait
                        .map_or(jittered, |s| s.max(jittered))
                        .min(policy.cap);
                    tokio::time::sleep(wait).await;
                }
            }
        }
    }
}

/// A client that answers from a function instead of the network.
pub struct StubClient<F> {
    model: String,
    respond: F,
}

impl<F> StubClient<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ChatError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, respond: F) -> Self {
        Self {
            model: model.into(),
            respond,
        }
    }
}

impl<F> ChatClient for StubClient<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ChatError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        (self.respond)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Attachment;
    use rand::SeedableRng;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.ceiling(1), Duration::from_secs(1));
        assert_eq!(p.ceiling(2), Duration::from_secs(2));
        assert_eq!(p.ceiling(6), Duration::from_secs(32));
        assert_eq!(p.ceiling(7), Duration::from_secs(60));
        assert_eq!(p.ceiling(40), Duration::from_secs(60));
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        for attempt in 1..10 {
            let d = p.delay(attempt, &mut rng);
            assert!(d >= p.ceiling(attempt) / 2 && d <= p.ceiling(attempt));
        }
    }

    #[test]
    fn config_from_toml() {
        let c = EndpointConfig::from_toml(
            "url = \"http://x/v1/chat/completions\"\nmodel = \"m\"\ntemperature = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.model, "m");
        assert_eq!(c.temperature, Some(0.2));
        assert_eq!(c.api_key_env.as_deref(), Some("OPENAI_API_KEY"));
        assert_eq!(c.retry(), RetryPolicy::default());
        assert!(EndpointConfig::from_toml("url = \"u\"\nmodel = \"m\"\nbogus = 1\n").is_err());
        assert!(
            EndpointConfig::from_toml("url = \"u\"\nmodel = \"m\"\nmax_attempts = 0\n").is_err()
        );
    }

    #[test]
    fn wire_format() {
        let msgs = vec![
            Message::text(Role::System, "sys"),
            Message {
                role: Role::User,
                parts: vec![
                    Part::Image(Attachment::from_bytes("a", b"\x89PNG\r\n\x1a\n".to_vec())),
                    Part::Text("q".into()),
                ],
            },
        ];
        let w = wire_messages(&msgs);
        assert_eq!(w[0], json!({"role": "system", "content": "sys"}));
        assert_eq!(w[1]["content"][0]["type"], "image_url");
        assert!(w[1]["content"][0]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(w[1]["content"][1], json!({"type": "text", "text": "q"}));
    }

    #[test]
    fn response_parsing() {
        let r = parse_response(r#"{"choices": [{"message": {"content": "(B)"}}], "usage": {"prompt_tokens": 10, "completion_tokens": 2}}"#).unwrap();
        assert_eq!(
            (r.text.as_str(), r.prompt_tokens, r.completion_tokens),
            ("(B)", Some(10), Some(2))
        );
        let r = parse_response(r#"{"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]}"#).unwrap();
        assert_eq!((r.text.as_str(), r.prompt_tokens), ("ab", None));
        assert!(matches!(
            parse_response(r#"{"choices": []}"#),
            Err(ChatError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_response("not json"),
            Err(ChatError::MalformedResponse(_))
        ));
    }
}
