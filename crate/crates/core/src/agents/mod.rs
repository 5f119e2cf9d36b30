//! Prompt contracts for the paraphrase, decomposition, judging and
//! aggregation agents.
//!
//! Every agent builds its prompt from the versioned assets in
//! [`crate::prompts`], calls the backend through a [`Session`], and parses the
//! reply into a typed value. A malformed reply earns exactly one reprompt
//! (charged under the retry ledger key); after that the agent either fails
//! with a typed [`AgentError`] or applies its documented fallback.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Attempt, BackendError, ChatRequest, Message, Session};

mod aggregate;
mod caption;
mod decompose;
pub mod json;
mod paraphrase;

pub use aggregate::{aggregate_global, aggregate_structured, judge_paraphrase, GlobalAggregate, JudgedAnswer, RationaleTuple};
pub use caption::{
    caption_judge, confidence_gate, extract_caption_claims, CaptionClaims, CaptionJudgement, CaptionVerdict, GateDecision,
    Slot, SlotSignal, SubjectCount,
};
pub use decompose::{
    decompose_caption_verify, decompose_vqa, AnswerType, AtomicQuestion, AtomicQuestionSet, GENERIC_COUNT_INSTRUCTION,
    YES_NO_INSTRUCTION,
};
pub use paraphrase::{paraphrase_logical, paraphrase_semantic, LogicalItem, LogicalParaphraseSet, ParaphraseSet};

pub const PARAPHRASE_TEMPERATURE: f32 = 0.7;
pub const DETERMINISTIC_TEMPERATURE: f32 = 0.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeIntensity {
    Low,
    #[default]
    Medium,
    High,
}

impl ChangeIntensity {
    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl fmt::Display for ChangeIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeIntensity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown change intensity `{other}` (expected low|medium|high)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("paraphrase agent: {reason}")]
    Paraphrase { reason: String, raw: String },
    #[error("decomposition agent: {reason}")]
    Decomposition { reason: String, raw: String },
    #[error("claim extraction: {reason}")]
    Claims { reason: String, raw: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Result of a call that may have been reprompted once.
pub(crate) enum Parsed<T> {
    Ok(T),
    Failed { reason: String, raw: String },
}

/// Sends `request`; on a parse failure appends the bad reply plus a format
/// reminder and tries exactly once more.
pub(crate) fn call_with_reprompt<T>(
    session: &Session<'_>,
    request: ChatRequest,
    reminder: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Parsed<T>, BackendError> {
    let first = reply_text(session, request.clone())?;
    let reason = match parse(&first) {
        Ok(value) => return Ok(Parsed::Ok(value)),
        Err(reason) => reason,
    };
    let retry = reprompt(request, &first, &format!("Your previous reply was rejected: {reason}. {reminder}"));
    let second = reply_text(session, retry)?;
    Ok(match parse(&second) {
        Ok(value) => Parsed::Ok(value),
        Err(reason) => Parsed::Failed { reason, raw: second },
    })
}

pub(crate) fn reprompt(mut request: ChatRequest, previous: &str, instruction: &str) -> ChatRequest {
    request.attempt = Attempt::Retry;
    request.messages.push(Message::assistant(previous));
    request.messages.push(Message::user(instruction));
    request
}

/// Reply text, with refusals and empty output folded into the empty string.
pub(crate) fn reply_text(session: &Session<'_>, request: ChatRequest) -> Result<String, BackendError> {
    match session.complete(request) {
        Ok(response) => Ok(response.text),
        Err(BackendError::Refused) => Ok(String::new()),
        Err(other) => Err(other),
    }
}

const JSON_REMINDER: &str = "Return only the JSON object in exactly the required format, with no extra text before or after it.";
