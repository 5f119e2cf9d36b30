use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::caption::{CaptionClaims, SubjectCount};
use super::json::{array_field, first_object};
use super::{call_with_reprompt, AgentError, Parsed, DETERMINISTIC_TEMPERATURE, JSON_REMINDER};
use crate::model::{ChatRequest, Session, Stage};
use crate::prompts;

pub const YES_NO_INSTRUCTION: &str = "Answer exactly: 'yes', 'no', or 'unclear'.";
pub const GENERIC_COUNT_INSTRUCTION: &str = "Answer exactly: 'one', 'two', 'many', 'none', or 'unclear'.";

const MIN_QUESTIONS: usize = 3;
const MAX_QUESTIONS: usize = 5;

/// Subject heads too generic to need an appearance probe.
const GENERIC_HEADS: &[&str] = &[
    "person", "people", "man", "men", "woman", "women", "child", "children", "animal", "animals", "vehicle",
    "vehicles", "object", "objects", "thing", "things", "room", "rooms", "unknown", "none",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    YesNo,
    Choice,
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicQuestion {
    /// 1-based position within its set.
    pub sub_index: usize,
    pub text: String,
    pub answer_type: AnswerType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicQuestionSet {
    pub paraphrase_index: usize,
    pub questions: Vec<AtomicQuestion>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub answer_logic: String,
}

/// Splits an image question into 3-5 sub-questions.
///
/// `requested` is clamped into 3..=5 and sent as the target count; a reply
/// with fewer than that is treated as malformed.
pub fn decompose_vqa(
    session: &Session<'_>,
    paraphrase: &str,
    paraphrase_index: usize,
    requested: usize,
) -> Result<AtomicQuestionSet, AgentError> {
    let requested = requested.clamp(MIN_QUESTIONS, MAX_QUESTIONS);
    let request = ChatRequest::llm(Stage::Decomposition)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::DECOMPOSE_VQA_SYSTEM.text())
        .user(prompts::DECOMPOSE_VQA_USER.render(&[("question", paraphrase), ("num_questions", &requested.to_string())]));
    let reminder = format!(
        "Provide between {requested} and {MAX_QUESTIONS} entries in \"sub_questions\", each with a \"question\" and an \
         \"answer_type\" of yes_no, choice or phrase (choice questions need \"options\"). {JSON_REMINDER}"
    );
    match call_with_reprompt(session, request, &reminder, |raw| parse_vqa(raw, requested))? {
        Parsed::Ok((questions, answer_logic)) => Ok(AtomicQuestionSet { paraphrase_index, questions, answer_logic }),
        Parsed::Failed { reason, raw } => Err(AgentError::Decomposition { reason, raw }),
    }
}

fn parse_vqa(raw: &str, requested: usize) -> Result<(Vec<AtomicQuestion>, String), String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let entries = array_field(&map, "sub_questions")?;
    check_count(entries.len(), requested)?;
    let questions = entries
        .iter()
        .enumerate()
        .map(|(i, entry)| vqa_question(entry, i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let answer_logic = map.get("answer_logic").and_then(Value::as_str).unwrap_or("").trim().to_owned();
    Ok((questions, answer_logic))
}

fn check_count(got: usize, requested: usize) -> Result<(), String> {
    if !(MIN_QUESTIONS..=MAX_QUESTIONS).contains(&got) {
        return Err(format!("expected {MIN_QUESTIONS}-{MAX_QUESTIONS} sub-questions, got {got}"));
    }
    if got < requested {
        return Err(format!("expected at least {requested} sub-questions, got {got}"));
    }
    Ok(())
}

fn vqa_question(entry: &Value, sub_index: usize) -> Result<AtomicQuestion, String> {
    let text = entry
        .get("question")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|q| !q.is_empty())
        .ok_or_else(|| format!("sub-question {sub_index} has no question text"))?;
    let raw_type = entry
        .get("answer_type")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("sub-question {sub_index} has no answer_type"))?;
    let answer_type = parse_answer_type(raw_type).ok_or_else(|| format!("unknown answer_type `{raw_type}`"))?;
    let options = match entry.get("options") {
        Some(Value::String(s)) => s.split(['/', ',']).map(str::trim).filter(|o| !o.is_empty()).map(str::to_owned).collect(),
        Some(Value::Array(items)) => {
            items.iter().filter_map(Value::as_str).map(str::trim).filter(|o| !o.is_empty()).map(str::to_owned).collect()
        }
        _ => Vec::new(),
    };
    if answer_type == AnswerType::Choice && options.len() < 2 {
        return Err(format!("choice sub-question {sub_index} lacks options"));
    }
    Ok(AtomicQuestion { sub_index, text: text.to_owned(), answer_type, options })
}

fn parse_answer_type(raw: &str) -> Option<AnswerType> {
    let key: String = raw.trim().to_ascii_lowercase().chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect();
    match key.as_str() {
        "yes_no" | "yesno" | "boolean" => Some(AnswerType::YesNo),
        "choice" | "multiple_choice" => Some(AnswerType::Choice),
        "phrase" | "open" | "short_answer" | "number" | "count" => Some(AnswerType::Phrase),
        _ => None,
    }
}

/// Writes 3-5 verification questions for one caption view, each carrying its
/// own answer-format instruction.
pub fn decompose_caption_verify(
    session: &Session<'_>,
    claims: &CaptionClaims,
    detailed_caption: &str,
    caption_view: &str,
    paraphrase_index: usize,
    requested: usize,
) -> Result<AtomicQuestionSet, AgentError> {
    let requested = requested.clamp(MIN_QUESTIONS, MAX_QUESTIONS);
    let claims_json = serde_json::to_string_pretty(claims).expect("claims serialize");
    let request = ChatRequest::llm(Stage::Decomposition)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::CAPTION_VERIFY_SYSTEM.text())
        .user(prompts::CAPTION_VERIFY_USER.render(&[
            ("claims", &claims_json),
            ("caption_view", caption_view),
            ("detailed_caption", detailed_caption),
            ("num_questions", &requested.to_string()),
        ]));
    let reminder = "Follow the count and appearance requirements and end every question with its answer-format \
                    instruction. Return only {\"sub_questions\": [...]}.";
    match call_with_reprompt(session, request, reminder, |raw| parse_caption_questions(raw, claims, requested))? {
        Parsed::Ok(questions) => Ok(AtomicQuestionSet { paraphrase_index, questions, answer_logic: String::new() }),
        Parsed::Failed { reason, raw } => Err(AgentError::Decomposition { reason, raw }),
    }
}

fn parse_caption_questions(raw: &str, claims: &CaptionClaims, requested: usize) -> Result<Vec<AtomicQuestion>, String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let entries = array_field(&map, "sub_questions")?;
    check_count(entries.len(), requested)?;
    let texts = entries
        .iter()
        .map(|e| e.as_str().map(str::trim).filter(|q| !q.is_empty()).ok_or("sub-question is not a non-empty string"))
        .collect::<Result<Vec<_>, _>>()?;
    validate_caption_questions(&texts, claims)?;
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| AtomicQuestion {
            sub_index: i + 1,
            text: text.to_owned(),
            answer_type: if text.ends_with(YES_NO_INSTRUCTION) { AnswerType::YesNo } else { AnswerType::Phrase },
            options: Vec::new(),
        })
        .collect())
}

/// Structural rules a caption-verification set must satisfy.
pub(crate) fn validate_caption_questions(questions: &[&str], claims: &CaptionClaims) -> Result<(), String> {
    if let Some(q) = questions.iter().find(|q| !q.to_ascii_lowercase().contains("answer")) {
        return Err(format!("question lacks an answer-format instruction: {q:?}"));
    }
    if claims.subject_count != SubjectCount::Unknown {
        if !questions.iter().any(|q| q.ends_with(GENERIC_COUNT_INSTRUCTION)) {
            return Err("missing the generic count question".into());
        }
        if !questions.iter().any(|q| q.ends_with(YES_NO_INSTRUCTION) && mentions_count(q)) {
            return Err("missing the yes/no question testing the asserted count".into());
        }
    }
    if is_specific_head(&claims.subject_head) && !questions.iter().any(|q| is_appearance_question(q)) {
        return Err(format!("subject `{}` needs an appearance question of at most five words", claims.subject_head));
    }
    Ok(())
}

fn mentions_count(question: &str) -> bool {
    let q = question.to_ascii_lowercase();
    let body = q.strip_suffix(&YES_NO_INSTRUCTION.to_ascii_lowercase()).unwrap_or(&q);
    ["exactly", "how many", "number of", "single", "only one", "more than", "several", "multiple", "many", "two", "one"]
        .iter()
        .any(|w| body.contains(w))
}

fn is_appearance_question(question: &str) -> bool {
    let q = question.to_ascii_lowercase();
    (q.contains("appearance") || q.contains("describe") || q.contains("look like")) && q.contains("five words")
}

pub(crate) fn is_specific_head(head: &str) -> bool {
    let head = head.trim().to_ascii_lowercase();
    !head.is_empty() && !GENERIC_HEADS.contains(&head.as_str())
}
