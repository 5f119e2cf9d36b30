use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::json::{array_field, first_object};
use super::{call_with_reprompt, reply_text, reprompt, AgentError, ChangeIntensity, Parsed, JSON_REMINDER, PARAPHRASE_TEMPERATURE};
use crate::answers::CandidateSet;
use crate::model::{ChatRequest, Session, Stage};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseSet {
    pub original: String,
    pub candidates: Vec<String>,
    pub change_intensity: ChangeIntensity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalItem {
    pub question: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalParaphraseSet {
    pub original_question: String,
    pub original_options: Vec<String>,
    pub items: Vec<LogicalItem>,
    /// Items discarded for a wrong option count or malformed shape.
    pub dropped: usize,
}

/// Rewrites `text` into exactly `n` meaning-preserving variants.
pub fn paraphrase_semantic(
    session: &Session<'_>,
    text: &str,
    n: usize,
    intensity: ChangeIntensity,
) -> Result<ParaphraseSet, AgentError> {
    let n_str = n.to_string();
    let request = ChatRequest::llm(Stage::Paraphrase)
        .temperature(PARAPHRASE_TEMPERATURE)
        .system(prompts::PARAPHRASE_SEMANTIC_SYSTEM.text())
        .user(prompts::PARAPHRASE_SEMANTIC_USER.render(&[
            ("change_intensity", intensity.as_str()),
            ("num_candidates", &n_str),
            ("input_sentence", text),
        ]));
    let reminder = format!("The \"candidates\" array must contain exactly {n} non-empty strings. {JSON_REMINDER}");
    match call_with_reprompt(session, request, &reminder, |raw| parse_candidates(raw, n))? {
        Parsed::Ok(candidates) => Ok(ParaphraseSet { original: text.to_owned(), candidates, change_intensity: intensity }),
        Parsed::Failed { reason, raw } => Err(AgentError::Paraphrase { reason, raw }),
    }
}

fn parse_candidates(raw: &str, n: usize) -> Result<Vec<String>, String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let items = array_field(&map, "candidates")?;
    let candidates = items
        .iter()
        .map(|v| match v {
            Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_owned()),
            other => Err(format!("candidate is not a non-empty string: {other}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if candidates.len() != n {
        return Err(format!("expected {n} candidates, got {}", candidates.len()));
    }
    Ok(candidates)
}

/// Produces `n` logically equivalent multiple-choice items whose option `j`
/// stands for original option `j`.
///
/// Items with the wrong option count are dropped; if that leaves fewer than
/// `n`, one follow-up call asks for the missing number.
pub fn paraphrase_logical(
    session: &Session<'_>,
    question: &str,
    options: &CandidateSet,
    n: usize,
) -> Result<LogicalParaphraseSet, AgentError> {
    let arity = options.len();
    let rendered_options = options.labels().join(", ");
    let request = ChatRequest::llm(Stage::Paraphrase)
        .temperature(PARAPHRASE_TEMPERATURE)
        .system(prompts::PARAPHRASE_LOGICAL_SYSTEM.text())
        .user(prompts::PARAPHRASE_LOGICAL_USER.render(&[
            ("question", question),
            ("options", &rendered_options),
            ("num_candidates", &n.to_string()),
            ("num_options", &arity.to_string()),
        ]));

    let first = reply_text(session, request.clone())?;
    let (mut items, mut dropped, retry) = match parse_items(&first, arity) {
        Ok((items, dropped)) if items.len() >= n => (items, dropped, None),
        Ok((items, dropped)) => {
            let missing = n - items.len();
            let instruction = format!(
                "{dropped} of your items were unusable (each \"options\" array must contain exactly {arity} entries). \
                 Generate exactly {missing} additional logically equivalent questions in the same JSON format."
            );
            (items, dropped, Some(reprompt(request, &first, &instruction)))
        }
        Err(reason) => {
            let instruction = format!(
                "Your previous reply was rejected: {reason}. Generate exactly {n} logically equivalent questions; \
                 every \"options\" array must contain exactly {arity} entries. {JSON_REMINDER}"
            );
            (Vec::new(), 0, Some(reprompt(request, &first, &instruction)))
        }
    };

    if let Some(retry) = retry {
        let second = reply_text(session, retry)?;
        match parse_items(&second, arity) {
            Ok((more, more_dropped)) => {
                items.extend(more);
                dropped += more_dropped;
            }
            Err(reason) if items.is_empty() => return Err(AgentError::Paraphrase { reason, raw: second }),
            Err(_) => {}
        }
        if items.len() < n {
            return Err(AgentError::Paraphrase {
                reason: format!("only {} of {n} items have {arity} options", items.len()),
                raw: second,
            });
        }
    }
    items.truncate(n);
    Ok(LogicalParaphraseSet {
        original_question: question.to_owned(),
        original_options: options.labels().to_vec(),
        items,
        dropped,
    })
}

/// Valid items plus the number dropped; `Err` only when the reply as a whole
/// is unusable.
fn parse_items(raw: &str, arity: usize) -> Result<(Vec<LogicalItem>, usize), String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let entries = array_field(&map, "generated_questions")?;
    let mut items = Vec::new();
    let mut dropped = 0;
    for entry in entries {
        match logical_item(entry, arity) {
            Some(item) => items.push(item),
            None => dropped += 1,
        }
    }
    Ok((items, dropped))
}

fn logical_item(entry: &Value, arity: usize) -> Option<LogicalItem> {
    let question = entry.get("question")?.as_str()?.trim();
    let options = entry
        .get("options")?
        .as_array()?
        .iter()
        .map(|o| o.as_str().map(str::trim).filter(|o| !o.is_empty()).map(str::to_owned))
        .collect::<Option<Vec<_>>>()?;
    // Options must stay distinguishable after normalization for the mapping back.
    let distinct = CandidateSet::new(options.iter().map(String::as_str)).is_ok();
    (!question.is_empty() && options.len() == arity && distinct)
        .then(|| LogicalItem { question: question.to_owned(), options })
}
