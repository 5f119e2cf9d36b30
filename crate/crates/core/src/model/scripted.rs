//! Closure-driven backend for tests and transcript authoring.

use super::{BackendError, CallContext, ChatBackend, ChatRequest, ChatResponse};

type Responder = dyn Fn(&ChatRequest, &CallContext<'_>) -> Result<String, BackendError> + Send + Sync;

pub struct ScriptedBackend {
    id: String,
    responder: Box<Responder>,
}

impl ScriptedBackend {
    pub fn new<F>(id: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self { id: id.into(), responder: Box::new(move |req, _| respond(req)) }
    }

    /// Responder that also sees the accounting context.
    pub fn with_context<F>(id: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&ChatRequest, &CallContext<'_>) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self { id: id.into(), responder: Box::new(respond) }
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest, ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError> {
        let text = (self.responder)(request, ctx)?;
        Ok(ChatResponse { text, latency_ms: 0, backend_id: self.id.clone() })
    }
}
