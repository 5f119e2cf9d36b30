use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::caption::render_pairs;
use super::json::{first_object, string_field};
use super::{call_with_reprompt, reply_text, AgentError, Parsed, DETERMINISTIC_TEMPERATURE};
use crate::answers::{extract_short_answer, majority_vote, map_to_candidates, normalize_answer, word_count, CandidateSet, EvidencePair, UNCLEAR};
use crate::model::{ChatRequest, Session, Stage};
use crate::prompts;

const MAX_ANSWER_WORDS: usize = 4;
const SHORT_ANSWER_REMINDER: &str =
    "Output ONLY the answer: a single word or short phrase of at most four words, no articles, no explanation.";

/// Answers `question` from (sub-question, answer) evidence. Returns the
/// normalized short answer, or the unclear sentinel when the reply is still
/// unusable after one reprompt.
///
/// `stage` is the ledger stage the call is charged to; the same prompt serves
/// both per-probe reduction and final aggregation.
pub fn aggregate_structured(
    session: &Session<'_>,
    stage: Stage,
    question: &str,
    evidence: &[EvidencePair],
) -> Result<String, AgentError> {
    let sub = render_pairs(evidence);
    let request = ChatRequest::llm(stage)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .user(prompts::AGGREGATE_VQA_USER.render(&[("question", question), ("sub", &sub)]));
    Ok(match call_with_reprompt(session, request, SHORT_ANSWER_REMINDER, parse_short_answer)? {
        Parsed::Ok(answer) => answer,
        Parsed::Failed { .. } => UNCLEAR.to_owned(),
    })
}

fn parse_short_answer(raw: &str) -> Result<String, String> {
    if raw.trim().is_empty() {
        return Err("empty reply".into());
    }
    let first_line = raw.trim().lines().next().unwrap_or_default();
    let answer = extract_short_answer(first_line);
    let words = word_count(&answer);
    if words > MAX_ANSWER_WORDS {
        return Err(format!("answer has {words} words"));
    }
    Ok(answer)
}

/// One paraphrase's VLM answer after the rationale judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedAnswer {
    pub paraphrase_index: usize,
    pub label: String,
    /// In [0, 1].
    pub weight: f64,
    pub rationale: String,
    /// True when the judge reply was unusable (or the rationale empty) and
    /// the raw answer was kept at full weight.
    pub fallback: bool,
}

/// Judges whether `rationale` supports `vlm_answer`. Always makes exactly one
/// call; an unusable reply or an empty rationale keeps the VLM answer with
/// weight 1.
pub fn judge_paraphrase(
    session: &Session<'_>,
    paraphrase_index: usize,
    paraphrase: &str,
    vlm_answer: &str,
    rationale: &str,
) -> Result<JudgedAnswer, AgentError> {
    let request = ChatRequest::llm(Stage::Judging)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::JUDGE_RJV_SYSTEM.text())
        .user(prompts::JUDGE_RJV_USER.render(&[("question", paraphrase), ("answer", vlm_answer), ("rationale", rationale)]));
    let raw = reply_text(session, request)?;
    let fallback = JudgedAnswer {
        paraphrase_index,
        label: normalize_answer(vlm_answer),
        weight: 1.0,
        rationale: rationale.to_owned(),
        fallback: true,
    };
    if rationale.trim().is_empty() {
        return Ok(fallback);
    }
    Ok(match parse_judgement(&raw) {
        Some((label, weight)) => JudgedAnswer { paraphrase_index, label, weight, rationale: rationale.to_owned(), fallback: false },
        None => fallback,
    })
}

fn parse_judgement(raw: &str) -> Option<(String, f64)> {
    let map = first_object(raw)?;
    let label = normalize_answer(&string_field(&map, "label").ok()?);
    if word_count(&label) > MAX_ANSWER_WORDS {
        return None;
    }
    let weight = match map.get("confidence").or_else(|| map.get("weight")) {
        Some(Value::Number(n)) => n.as_f64()?,
        Some(Value::String(s)) => s.trim().parse().ok()?,
        None => 1.0,
        Some(_) => return None,
    };
    Some((label, weight.clamp(0.0, 1.0)))
}

/// (paraphrase, answer, rationale) from one VLM call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleTuple {
    pub paraphrase: String,
    pub answer: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalAggregate {
    pub label: String,
    /// True when the aggregator's reply was unusable and the majority of the
    /// raw answers was used instead.
    pub fallback: bool,
}

/// Single call over all rationale tuples. An unusable reply (too long, or
/// outside `candidates` when given) falls back to majority vote.
pub fn aggregate_global(
    session: &Session<'_>,
    question: &str,
    tuples: &[RationaleTuple],
    candidates: Option<&CandidateSet>,
) -> Result<GlobalAggregate, AgentError> {
    let sub = tuples
        .iter()
        .enumerate()
        .map(|(i, t)| format!("P{n}: {}\nA{n}: {}\nR{n}: {}", t.paraphrase, t.answer.trim(), t.rationale.trim(), n = i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let request = ChatRequest::llm(Stage::Aggregation)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::AGGREGATE_GLOBAL_SYSTEM.text())
        .user(prompts::AGGREGATE_GLOBAL_USER.render(&[("question", question), ("sub", &sub)]));
    let raw = reply_text(session, request)?;

    let answers: Vec<&str> = tuples.iter().map(|t| t.answer.as_str()).collect();
    let majority = || {
        let observed;
        let set = match candidates {
            Some(c) => c,
            None => match CandidateSet::from_observed(&answers) {
                Some(c) => {
                    observed = c;
                    &observed
                }
                None => return UNCLEAR.to_owned(),
            },
        };
        majority_vote(&answers, set)
    };
    if tuples.len() == 1 {
        // Nothing to reconcile: the lone answer stands.
        return Ok(GlobalAggregate { label: majority(), fallback: false });
    }
    let parsed = parse_short_answer(&raw).ok().filter(|a| a != UNCLEAR).and_then(|a| match candidates {
        Some(c) => map_to_candidates(&a, c).map(str::to_owned),
        None => Some(a),
    });
    Ok(match parsed {
        Some(label) => GlobalAggregate { label, fallback: false },
        None => GlobalAggregate { label: majority(), fallback: true },
    })
}
