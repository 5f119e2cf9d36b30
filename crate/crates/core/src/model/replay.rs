//! Record and replay of model exchanges.
//!
//! A request is identified by its stage, model kind, image reference, and a
//! canonical prompt text: every message rendered as `role: content`, joined,
//! with all whitespace runs collapsed to a single space. Lookups are exact and
//! a miss is an error.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, BackendHandle, CallContext, ChatBackend, ChatRequest, ChatResponse, Message, ModelKind, Stage};

pub fn canonical_prompt(messages: &[Message]) -> String {
    let joined = messages
        .iter()
        .map(|m| format!("{}: {}", m.role.as_str(), m.content))
        .collect::<Vec<_>>()
        .join("\n");
    joined.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub stage: Stage,
    pub model: ModelKind,
    pub prompt: String,
    pub image_ref: Option<String>,
}

impl Fingerprint {
    pub fn of(request: &ChatRequest) -> Self {
        Self {
            stage: request.stage,
            model: request.model,
            prompt: canonical_prompt(&request.messages),
            image_ref: request.image_ref().map(str::to_owned),
        }
    }
}

/// One line of a replay script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub stage_tag: Stage,
    pub model_kind: ModelKind,
    pub prompt_fingerprint: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    pub response_text: String,
}

impl ReplayEntry {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            stage: self.stage_tag,
            model: self.model_kind,
            // Normalized again so hand-edited scripts match regardless of spacing.
            prompt: self.prompt_fingerprint.split_whitespace().collect::<Vec<_>>().join(" "),
            image_ref: self.image_ref.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("reading replay script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing replay script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate replay entry #{index} for {stage}/{model}: `{prompt}`")]
    Duplicate { index: usize, stage: Stage, model: ModelKind, prompt: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayScript {
    entries: Vec<ReplayEntry>,
}

impl ReplayScript {
    pub fn from_entries(entries: Vec<ReplayEntry>) -> Result<Self, ReplayError> {
        let mut seen = HashMap::new();
        for (index, entry) in entries.iter().enumerate() {
            let fp = entry.fingerprint();
            if seen.insert(fp.clone(), index).is_some() {
                return Err(ReplayError::Duplicate { index, stage: fp.stage, model: fp.model, prompt: fp.prompt });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let text = fs::read_to_string(path)?;
        Self::from_entries(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReplayError> {
        let mut text = serde_json::to_string_pretty(&self.entries)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct ReplayBackend {
    id: String,
    table: HashMap<Fingerprint, String>,
}

impl ReplayBackend {
    pub fn new(id: impl Into<String>, script: &ReplayScript) -> Self {
        let table = script.entries.iter().map(|e| (e.fingerprint(), e.response_text.clone())).collect();
        Self { id: id.into(), table }
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest, _ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError> {
        let fp = Fingerprint::of(request);
        match self.table.get(&fp) {
            Some(text) => Ok(ChatResponse { text: text.clone(), latency_ms: 0, backend_id: self.id.clone() }),
            None => Err(BackendError::ReplayMiss { stage: fp.stage, model: fp.model, fingerprint: fp.prompt }),
        }
    }
}

/// Wraps a backend and keeps the first response seen for every fingerprint.
pub struct RecordingBackend {
    inner: BackendHandle,
    recorded: Mutex<(Vec<ReplayEntry>, HashMap<Fingerprint, usize>)>,
}

impl RecordingBackend {
    pub fn new(inner: BackendHandle) -> Self {
        Self { inner, recorded: Mutex::new((Vec::new(), HashMap::new())) }
    }

    pub fn script(&self) -> ReplayScript {
        let guard = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
        ReplayScript { entries: guard.0.clone() }
    }
}

impl ChatBackend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest, _ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let fp = Fingerprint::of(request);
        let mut guard = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
        let (entries, index) = &mut *guard;
        match index.get(&fp) {
            Some(&i) if entries[i].response_text != response.text => {
                log::warn!("recording: conflicting responses for one fingerprint; keeping the first");
            }
            Some(_) => {}
            None => {
                index.insert(fp.clone(), entries.len());
                entries.push(ReplayEntry {
                    stage_tag: fp.stage,
                    model_kind: fp.model,
                    prompt_fingerprint: fp.prompt,
                    image_ref: fp.image_ref,
                    response_text: response.text.clone(),
                });
            }
        }
        Ok(response)
    }
}
