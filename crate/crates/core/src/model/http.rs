//! OpenAI-compatible `/chat/completions` client.

use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{BackendError, CallContext, ChatBackend, ChatRequest, ChatResponse, Message};

pub const API_KEY_ENV: &str = "PDA_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Retries after the first attempt, transport failures only.
    pub max_retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let id = format!("http:{}@{}", config.model, config.base_url.trim_end_matches('/'));
        Ok(Self { id, config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport { attempts: 1, message: e.to_string() })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transport { attempts: 1, message: format!("HTTP {status}: {text}") });
        }
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body: text });
        }
        Ok(text)
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest, _ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError> {
        let body = request_body(&self.config.model, request)?;
        let started = Instant::now();
        let mut attempt = 0;
        let raw = loop {
            match self.send_once(&body) {
                Ok(raw) => break raw,
                Err(BackendError::Transport { message, .. }) if attempt < self.config.max_retries => {
                    let delay = self.config.backoff * 2u32.pow(attempt);
                    log::warn!("{}: transport failure ({message}); retrying in {delay:?}", self.id);
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport { attempts: attempt + 1, message });
                }
                Err(other) => return Err(other),
            }
        };
        let text = parse_completion(&raw)?;
        Ok(ChatResponse { text, latency_ms: started.elapsed().as_millis() as u64, backend_id: self.id.clone() })
    }
}

/// Wire body for one request.
pub fn request_body(model: &str, request: &ChatRequest) -> Result<Value, BackendError> {
    let messages = request.messages.iter().map(message_json).collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }))
}

fn message_json(message: &Message) -> Result<Value, BackendError> {
    let role = message.role.as_str();
    Ok(match &message.image_ref {
        None => json!({ "role": role, "content": message.content }),
        Some(image) => json!({
            "role": role,
            "content": [
                { "type": "text", "text": message.content },
                { "type": "image_url", "image_url": { "url": image_url(image)? } },
            ],
        }),
    })
}

/// Remote and data URLs pass through; anything else is read as a local file
/// and inlined as base64.
pub fn image_url(image_ref: &str) -> Result<String, BackendError> {
    if ["http://", "https://", "data:"].iter().any(|p| image_ref.starts_with(p)) {
        return Ok(image_ref.to_owned());
    }
    let path = Path::new(image_ref);
    let bytes = std::fs::read(path).map_err(|e| BackendError::Config(format!("image `{image_ref}`: {e}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub fn parse_completion(raw: &str) -> Result<String, BackendError> {
    let body: CompletionBody = serde_json::from_str(raw).map_err(|e| BackendError::Decode(e.to_string()))?;
    let choice = body.choices.into_iter().next().ok_or_else(|| BackendError::Decode("no choices".into()))?;
    if choice.finish_reason.as_deref() == Some("content_filter") {
        return Err(BackendError::Refused);
    }
    match choice.message.content {
        Some(text) if !text.trim().is_empty() => Ok(text),
        _ => Err(BackendError::Refused),
    }
}
