#![allow(dead_code)]

use std::sync::Arc;

use pda_core::answers::CandidateSet;
use pda_core::model::scripted::ScriptedBackend;
use pda_core::model::synthetic::{SyntheticBackend, SyntheticVlmConfig};
use pda_core::model::{BackendHandle, Backends, ChatBackend, ChatRequest};
use pda_core::pipeline::Query;

pub fn synthetic(q: f64, seed: u64) -> Arc<SyntheticBackend> {
    Arc::new(SyntheticBackend::new(SyntheticVlmConfig::binary(q, q, seed)).unwrap())
}

pub fn uniform(backend: Arc<SyntheticBackend>) -> Backends {
    Backends::uniform(BackendHandle::from_arc(backend))
}

/// Answers with `f` where it returns `Some`, otherwise defers to `base`.
pub fn overlay<F>(base: Arc<SyntheticBackend>, f: F) -> BackendHandle
where
    F: Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
{
    BackendHandle::new(ScriptedBackend::with_context("overlay", move |req, ctx| match f(req) {
        Some(text) => Ok(text),
        None => base.complete(req, ctx).map(|r| r.text),
    }))
}

pub fn binary_query(id: &str) -> Query {
    Query::structured(id, &format!("img/{id}.jpg"), "Which label describes the image?", CandidateSet::new(["correct", "wrong"]).unwrap())
        .with_gold(["correct"])
        .adversarial(true)
}

pub fn open_query(id: &str) -> Query {
    Query::open_form(id, &format!("img/{id}.jpg"), "What is shown?").adversarial(true)
}
pub mod corpus;
pub mod props;
