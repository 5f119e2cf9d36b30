//! Victim-model prompts and reply parsing.

use crate::agents::{AnswerType, AtomicQuestion};
use crate::answers::CandidateSet;
use crate::model::{BackendError, ChatRequest, Session, Stage};

const OPTIONS_PREFIX: &str = "Choose from the following list:";

/// Appends the option list unless the question already carries one.
pub(crate) fn with_options(question: &str, candidates: Option<&CandidateSet>) -> String {
    match candidates {
        Some(c) if !question.contains(OPTIONS_PREFIX) => format!("{question}\n{OPTIONS_PREFIX} {}.", c.display_list()),
        _ => question.to_owned(),
    }
}

/// Same, for a logical paraphrase item with its own option wording.
pub(crate) fn with_item_options(question: &str, options: &[String]) -> String {
    let lower = question.to_lowercase();
    if question.contains(OPTIONS_PREFIX) || options.iter().all(|o| lower.contains(&o.to_lowercase())) {
        question.to_owned()
    } else {
        format!("{question}\n{OPTIONS_PREFIX} {}.", options.join(", "))
    }
}

pub(crate) fn short_answer_prompt(question: &str) -> String {
    format!("{question}\nAnswer the question using a single word or phrase.")
}

pub(crate) fn rationale_prompt(question: &str) -> String {
    format!(
        "{question}\nReply in exactly two lines:\nAnswer: <single word or short phrase>\n\
         Rationale: <one sentence naming the visual evidence>"
    )
}

pub(crate) fn atomic_prompt(question: &AtomicQuestion) -> String {
    match question.answer_type {
        AnswerType::YesNo => format!("{}\nAnswer yes or no.", question.text),
        AnswerType::Choice => format!("{}\nChoose one: {}.", question.text, question.options.join(" / ")),
        AnswerType::Phrase => short_answer_prompt(&question.text),
    }
}

/// One victim call. Refusals and empty replies come back as the empty string,
/// which normalizes to the unclear sentinel.
pub(crate) fn ask(session: &Session<'_>, image_ref: &str, prompt: String, max_tokens: u32) -> Result<String, BackendError> {
    let request = ChatRequest::vlm(Stage::Answering).max_output_tokens(max_tokens).user_with_image(prompt, image_ref);
    match session.complete(request) {
        Ok(response) => Ok(response.text),
        Err(BackendError::Refused) => Ok(String::new()),
        Err(other) => Err(other),
    }
}

/// Splits an `Answer: ... / Rationale: ...` reply. Without an `Answer:` line
/// the first line is the answer and the rest the rationale.
pub(crate) fn split_rationale(raw: &str) -> (String, String) {
    let mut answer = None;
    let mut rationale = None;
    for line in raw.lines() {
        let line = line.trim();
        if let Some(rest) = strip_label(line, "answer") {
            answer.get_or_insert(rest.to_owned());
        } else if let Some(rest) = strip_label(line, "rationale") {
            rationale.get_or_insert(rest.to_owned());
        }
    }
    match answer {
        Some(a) => (a, rationale.unwrap_or_default()),
        None => {
            let mut lines = raw.trim().lines();
            let first = lines.next().unwrap_or_default().trim().to_owned();
            let rest = rationale.unwrap_or_else(|| lines.collect::<Vec<_>>().join(" ").trim().to_owned());
            (first, rest)
        }
    }
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    let rest = line[label.len()..].trim_start();
    (head.eq_ignore_ascii_case(label) && rest.starts_with(':')).then(|| rest[1..].trim())
}
