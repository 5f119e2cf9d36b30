//! Chat-completion interface shared by every agent and the victim model.
//!
//! All model traffic goes through [`BackendHandle::complete`], which validates
//! the request and charges exactly one ledger entry per call before handing it
//! to a [`ChatBackend`] implementation. Three implementations ship with the
//! crate: [`http::HttpBackend`] (OpenAI-compatible wire format),
//! [`replay::ReplayBackend`] (frozen transcripts), and
//! [`synthetic::SyntheticBackend`] (seeded stochastic stand-in for a VLM).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
mod ledger;
pub mod replay;
pub mod scripted;
pub mod synthetic;

pub use ledger::{CallLedger, LedgerKey, LiveLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Llm,
    Vlm,
}

impl ModelKind {
    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Vlm => "vlm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Self::Llm),
            "vlm" => Ok(Self::Vlm),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// Pipeline stage a call is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Paraphrase,
    Decomposition,
    Answering,
    Judging,
    Aggregation,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Paraphrase,
        Stage::Decomposition,
        Stage::Answering,
        Stage::Judging,
        Stage::Aggregation,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Paraphrase => "paraphrase",
            Self::Decomposition => "decomposition",
            Self::Answering => "answering",
            Self::Judging => "judging",
            Self::Aggregation => "aggregation",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// First call or the single reprompt an agent is allowed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attempt {
    #[default]
    Primary,
    Retry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub const fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), image_ref: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), image_ref: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), image_ref: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: ModelKind,
    pub messages: Vec<Message>,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub stage: Stage,
    #[serde(default)]
    pub attempt: Attempt,
    /// Query id, carried for logging and for the synthetic backend's keyed
    /// randomness. Never sent over the wire and never part of a replay
    /// fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<String>,
    /// Marks the query as adversarial. Only the synthetic backend reads it.
    #[serde(default)]
    pub adversarial_hint: bool,
}

impl ChatRequest {
    pub fn new(model: ModelKind, stage: Stage) -> Self {
        Self {
            model,
            messages: Vec::new(),
            temperature: 0.0,
            max_output_tokens: 256,
            stage,
            attempt: Attempt::Primary,
            correlation_id: None,
            adversarial_hint: false,
        }
    }

    pub fn llm(stage: Stage) -> Self {
        Self::new(ModelKind::Llm, stage)
    }

    pub fn vlm(stage: Stage) -> Self {
        Self::new(ModelKind::Vlm, stage)
    }

    pub fn system(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message::system(content));
        self
    }

    pub fn user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message::user(content));
        self
    }

    /// User turn carrying an image. Only valid on VLM requests.
    pub fn user_with_image(mut self, content: impl Into<String>, image_ref: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
            image_ref: Some(image_ref.into()),
        });
        self
    }

    pub fn temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn max_output_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = max;
        self
    }

    pub fn correlation(mut self, id: Option<&str>, adversarial: bool) -> Self {
        self.correlation_id = id.map(str::to_owned);
        self.adversarial_hint = adversarial;
        self
    }

    pub fn ledger_key(&self) -> LedgerKey {
        LedgerKey { stage: self.stage, model: self.model, attempt: self.attempt }
    }

    /// First image reference in the conversation, if any.
    pub fn image_ref(&self) -> Option<&str> {
        self.messages.iter().find_map(|m| m.image_ref.as_deref())
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |msg: &str| Err(BackendError::InvalidRequest(msg.to_owned()));
        if self.messages.is_empty() {
            return invalid("request has no messages");
        }
        let systems = self.messages.iter().filter(|m| m.role == Role::System).count();
        if systems > 1 {
            return invalid("more than one system message");
        }
        if systems == 1 && self.messages[0].role != Role::System {
            return invalid("system message must come first");
        }
        if self.model == ModelKind::Llm && self.messages.iter().any(|m| m.image_ref.is_some()) {
            return invalid("image_ref on an LLM request");
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return invalid("temperature outside [0, 1]");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    Decode(String),
    #[error("no replay entry for {stage}/{model} fingerprint `{fingerprint}`")]
    ReplayMiss { stage: Stage, model: ModelKind, fingerprint: String },
    #[error("model refused or returned empty output")]
    Refused,
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }
}

/// Accounting hooks available to a backend while it serves a call.
///
/// Composite backends that issue additional model calls on their own must
/// charge them here so the run ledger stays complete.
pub struct CallContext<'a> {
    ledgers: [Option<&'a LiveLedger>; 2],
}

impl<'a> CallContext<'a> {
    pub fn detached() -> Self {
        Self { ledgers: [None, None] }
    }

    pub fn charge(&self, key: LedgerKey) {
        for ledger in self.ledgers.iter().flatten() {
            ledger.increment(key);
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &ChatRequest, ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError>;
}

/// A backend plus its lifetime call ledger.
#[derive(Clone)]
pub struct BackendHandle {
    backend: Arc<dyn ChatBackend>,
    ledger: Arc<LiveLedger>,
}

impl fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendHandle").field("id", &self.backend.id()).finish()
    }
}

impl BackendHandle {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend, ledger: Arc::new(LiveLedger::new()) }
    }

    pub fn id(&self) -> &str {
        self.backend.id()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.complete_charged(request, None)
    }

    /// Like [`complete`](Self::complete), additionally charging `run_ledger`.
    pub fn complete_charged(
        &self,
        request: &ChatRequest,
        run_ledger: Option<&LiveLedger>,
    ) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let ctx = CallContext { ledgers: [Some(&self.ledger), run_ledger] };
        ctx.charge(request.ledger_key());
        let started = Instant::now();
        let mut response = self.backend.complete(request, &ctx)?;
        if response.latency_ms == 0 {
            response.latency_ms = started.elapsed().as_millis() as u64;
        }
        Ok(response)
    }

    pub fn ledger_snapshot(&self) -> CallLedger {
        self.ledger.snapshot()
    }
}

/// Backend bindings for the five agent roles.
#[derive(Debug, Clone)]
pub struct Backends {
    pub paraphraser: BackendHandle,
    pub decomposer: BackendHandle,
    pub judge: BackendHandle,
    pub aggregator: BackendHandle,
    pub victim: BackendHandle,
}

impl Backends {
    /// Every role served by the same backend.
    pub fn uniform(handle: BackendHandle) -> Self {
        Self {
            paraphraser: handle.clone(),
            decomposer: handle.clone(),
            judge: handle.clone(),
            aggregator: handle.clone(),
            victim: handle,
        }
    }

    /// Separate agent and victim backends.
    pub fn split(agents: BackendHandle, victim: BackendHandle) -> Self {
        Self {
            paraphraser: agents.clone(),
            decomposer: agents.clone(),
            judge: agents.clone(),
            aggregator: agents,
            victim,
        }
    }

    pub fn route(&self, request: &ChatRequest) -> &BackendHandle {
        match (request.model, request.stage) {
            (ModelKind::Vlm, _) => &self.victim,
            (ModelKind::Llm, Stage::Paraphrase) => &self.paraphraser,
            (ModelKind::Llm, Stage::Decomposition) => &self.decomposer,
            (ModelKind::Llm, Stage::Judging) => &self.judge,
            (ModelKind::Llm, Stage::Aggregation | Stage::Answering) => &self.aggregator,
        }
    }

    /// Distinct backend ids in role order.
    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for h in [&self.paraphraser, &self.decomposer, &self.judge, &self.aggregator, &self.victim] {
            if !ids.iter().any(|id| id == h.id()) {
                ids.push(h.id().to_owned());
            }
        }
        ids
    }
}

/// Per-query view over [`Backends`] with its own ledger.
pub struct Session<'a> {
    backends: &'a Backends,
    ledger: LiveLedger,
    correlation_id: Option<String>,
    adversarial: bool,
}

impl<'a> Session<'a> {
    pub fn new(backends: &'a Backends) -> Self {
        Self { backends, ledger: LiveLedger::new(), correlation_id: None, adversarial: false }
    }

    pub fn for_query(backends: &'a Backends, query_id: &str, adversarial: bool) -> Self {
        Self {
            backends,
            ledger: LiveLedger::new(),
            correlation_id: Some(query_id.to_owned()),
            adversarial,
        }
    }

    pub fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        let request = request.correlation(self.correlation_id.as_deref(), self.adversarial);
        self.backends.route(&request).complete_charged(&request, Some(&self.ledger))
    }

    pub fn ledger(&self) -> CallLedger {
        self.ledger.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::scripted::ScriptedBackend;

    fn echo() -> BackendHandle {
        BackendHandle::new(ScriptedBackend::new("echo", |req: &ChatRequest| Ok(req.last_user_text().to_owned())))
    }

    #[test]
    fn request_invariants() {
        let ok = ChatRequest::llm(Stage::Paraphrase).system("s").user("u");
        assert!(ok.validate().is_ok());
        let two_systems = ChatRequest::llm(Stage::Paraphrase).system("a").system("b");
        assert!(two_systems.validate().is_err());
        let late_system = ChatRequest::llm(Stage::Paraphrase).user("u").system("s");
        assert!(late_system.validate().is_err());
        let image_on_llm = ChatRequest::llm(Stage::Judging).user_with_image("u", "x.png");
        assert!(image_on_llm.validate().is_err());
        let hot = ChatRequest::llm(Stage::Judging).user("u").temperature(1.5);
        assert!(hot.validate().is_err());
        let image_on_vlm = ChatRequest::vlm(Stage::Answering).user_with_image("u", "x.png");
        assert!(image_on_vlm.validate().is_ok());
    }

    #[test]
    fn fresh_backend_has_empty_ledger() {
        assert!(echo().ledger_snapshot().is_empty());
    }

    #[test]
    fn one_call_one_entry() {
        let handle = echo();
        handle.complete(&ChatRequest::llm(Stage::Paraphrase).user("hi")).unwrap();
        assert_eq!(
            handle.ledger_snapshot(),
            CallLedger::new().with(Stage::Paraphrase, ModelKind::Llm, 1)
        );
    }

    #[test]
    fn invalid_request_is_not_charged() {
        let handle = echo();
        let bad = ChatRequest::llm(Stage::Paraphrase);
        assert!(matches!(handle.complete(&bad), Err(BackendError::InvalidRequest(_))));
        assert!(handle.ledger_snapshot().is_empty());
    }

    #[test]
    fn failed_call_is_still_charged() {
        let handle = BackendHandle::new(ScriptedBackend::new("fail", |_: &ChatRequest| Err(BackendError::Refused)));
        assert!(handle.complete(&ChatRequest::vlm(Stage::Answering).user("q")).is_err());
        assert_eq!(handle.ledger_snapshot().total(), 1);
    }

    #[test]
    fn session_ledger_is_separate_from_backend_lifetime_ledger() {
        let backends = Backends::uniform(echo());
        let first = Session::new(&backends);
        first.complete(ChatRequest::llm(Stage::Paraphrase).user("a")).unwrap();
        let second = Session::new(&backends);
        second.complete(ChatRequest::vlm(Stage::Answering).user("b")).unwrap();
        assert_eq!(first.ledger().total(), 1);
        assert_eq!(second.ledger().total(), 1);
        assert_eq!(backends.victim.ledger_snapshot().total(), 2);
    }

    #[test]
    fn ledger_total_matches_concurrent_call_count() {
        let handle = echo();
        std::thread::scope(|scope| {
            for t in 0..4 {
                let handle = &handle;
                scope.spawn(move || {
                    for i in 0..250 {
                        let stage = if (t + i) % 2 == 0 { Stage::Answering } else { Stage::Judging };
                        let model = if stage == Stage::Answering { ModelKind::Vlm } else { ModelKind::Llm };
                        handle.complete(&ChatRequest::new(model, stage).user("x")).unwrap();
                    }
                });
            }
        });
        assert_eq!(handle.ledger_snapshot().total(), 1000);
    }
}
