use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::decompose::GENERIC_COUNT_INSTRUCTION;
use super::json::{first_object, string_field};
use super::{call_with_reprompt, AgentError, Parsed, DETERMINISTIC_TEMPERATURE, JSON_REMINDER};
use crate::answers::EvidencePair;
use crate::model::{ChatRequest, Session, Stage};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectCount {
    One,
    Two,
    Many,
    Unknown,
}

impl SubjectCount {
    pub const fn as_str(self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Two => "two",
            Self::Many => "many",
            Self::Unknown => "unknown",
        }
    }

    fn parse(word: &str) -> Option<Self> {
        match word.trim().to_ascii_lowercase().as_str() {
            "one" => Some(Self::One),
            "two" => Some(Self::Two),
            "many" => Some(Self::Many),
            "unknown" => Some(Self::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionClaims {
    pub subject_head: String,
    pub subject_count: SubjectCount,
    pub key_object: String,
    pub relation: String,
    pub scene: String,
}

/// Parses the five caption slots; values outside the closed count set are a
/// parse failure.
pub fn extract_caption_claims(session: &Session<'_>, short_caption: &str) -> Result<CaptionClaims, AgentError> {
    let request = ChatRequest::llm(Stage::Decomposition)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::CAPTION_CLAIMS_SYSTEM.text())
        .user(prompts::CAPTION_CLAIMS_USER.render(&[("SHORT_CAPTION", short_caption)]));
    let reminder = format!(
        "Use exactly the keys subject_head, subject_count, key_object, relation, scene; subject_count must be one of \
         \"one\", \"two\", \"many\", \"unknown\". {JSON_REMINDER}"
    );
    match call_with_reprompt(session, request, &reminder, parse_claims)? {
        Parsed::Ok(claims) => Ok(claims),
        Parsed::Failed { reason, raw } => Err(AgentError::Claims { reason, raw }),
    }
}

fn parse_claims(raw: &str) -> Result<CaptionClaims, String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let slot = |key: &str| -> Result<String, String> {
        let value = string_field(&map, key)?.trim().to_lowercase();
        Ok(if value.is_empty() { "unknown".to_owned() } else { value })
    };
    let count = string_field(&map, "subject_count")?;
    let subject_count = SubjectCount::parse(&count).ok_or_else(|| format!("subject_count `{count}` is not one/two/many/unknown"))?;
    Ok(CaptionClaims {
        subject_head: slot("subject_head")?,
        subject_count,
        key_object: slot("key_object")?,
        relation: slot("relation")?,
        scene: slot("scene")?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionVerdict {
    pub has_conflict: bool,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Count,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("count")
    }
}

/// How one evidence answer bears on the caption's claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotSignal {
    Support,
    Contradiction,
    /// A "yes" (or count answer) pointing at a different value.
    Alternative { slot: Slot, value: String },
    /// A "no" against a different value for the slot.
    AlternativeRejected { slot: Slot, value: String },
    Unclear,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub has_conflict: bool,
    pub signals: Vec<SlotSignal>,
    pub reason: String,
}

/// Deterministic edit gate: a direct contradiction, or at least two
/// consistent answers for one alternative value with no "no" on that slot.
pub fn confidence_gate(claims: &CaptionClaims, evidence: &[EvidencePair]) -> GateDecision {
    let signals: Vec<SlotSignal> = evidence.iter().map(|p| classify(claims, p)).collect();
    if let Some(i) = signals.iter().position(|s| *s == SlotSignal::Contradiction) {
        return GateDecision {
            has_conflict: true,
            reason: format!("direct conflict: {:?} answered no", evidence[i].question),
            signals,
        };
    }
    let rejected: BTreeSet<Slot> = signals
        .iter()
        .filter_map(|s| match s {
            SlotSignal::AlternativeRejected { slot, .. } => Some(*slot),
            _ => None,
        })
        .collect();
    let mut alternatives: BTreeMap<(Slot, &str), usize> = BTreeMap::new();
    for s in &signals {
        if let SlotSignal::Alternative { slot, value } = s {
            *alternatives.entry((*slot, value.as_str())).or_default() += 1;
        }
    }
    let strong = alternatives.iter().find(|((slot, _), n)| **n >= 2 && !rejected.contains(slot));
    match strong {
        Some(((slot, value), n)) => GateDecision {
            has_conflict: true,
            reason: format!("{n} answers indicate {slot} = {value}"),
            signals,
        },
        None => GateDecision { has_conflict: false, reason: "no conflict passes the gate".into(), signals },
    }
}

fn classify(claims: &CaptionClaims, pair: &EvidencePair) -> SlotSignal {
    let Some(word) = pair.answer.split(|c: char| !c.is_alphanumeric()).find(|w| !w.is_empty()) else {
        return SlotSignal::Unclear;
    };
    let claimed = claims.subject_count;
    if pair.question.contains(GENERIC_COUNT_INSTRUCTION) && matches!(word, "one" | "two" | "many" | "none") {
        return match claimed {
            SubjectCount::Unknown => SlotSignal::Neutral,
            c if c.as_str() == word => SlotSignal::Support,
            _ => SlotSignal::Alternative { slot: Slot::Count, value: word.to_owned() },
        };
    }
    let asserted = asserted_count(&pair.question);
    let differs = claimed != SubjectCount::Unknown && asserted.is_some_and(|a| a != claimed);
    match (word, differs) {
        ("unclear", _) => SlotSignal::Unclear,
        ("yes", true) => SlotSignal::Alternative { slot: Slot::Count, value: asserted.unwrap().as_str().to_owned() },
        ("no", true) => SlotSignal::AlternativeRejected { slot: Slot::Count, value: asserted.unwrap().as_str().to_owned() },
        ("yes", false) => SlotSignal::Support,
        ("no", false) => SlotSignal::Contradiction,
        _ => SlotSignal::Neutral,
    }
}

/// Count a yes/no question asserts, e.g. "exactly two women".
fn asserted_count(question: &str) -> Option<SubjectCount> {
    let q = question.to_ascii_lowercase();
    let words: Vec<&str> = q.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    for pair in words.windows(2) {
        let hit = match pair {
            ["exactly" | "only", n] => count_word(n),
            ["a", "single"] | ["just", "one"] => Some(SubjectCount::One),
            ["more", "than"] | ["several", _] | ["multiple", _] => Some(SubjectCount::Many),
            _ => None,
        };
        if hit.is_some() {
            return hit;
        }
    }
    None
}

fn count_word(word: &str) -> Option<SubjectCount> {
    match word {
        "one" | "1" | "single" => Some(SubjectCount::One),
        "two" | "2" => Some(SubjectCount::Two),
        "three" | "four" | "five" | "six" | "seven" | "eight" | "nine" | "ten" | "many" => Some(SubjectCount::Many),
        w if w.parse::<u32>().is_ok_and(|n| n >= 3) => Some(SubjectCount::Many),
        _ => None,
    }
}

/// Final caption decision plus what each side of the gate said.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionJudgement {
    pub verdict: CaptionVerdict,
    pub gate: GateDecision,
    /// Parsed judge reply; `None` when it stayed malformed after the reprompt.
    pub llm: Option<CaptionVerdict>,
    /// Whether the judge's `has_conflict` agreed with the gate.
    pub agreed: bool,
}

/// Asks the judge for a verdict and lets the deterministic gate decide
/// whether an edit is allowed. Without an edit the original caption is
/// returned byte-for-byte.
pub fn caption_judge(
    session: &Session<'_>,
    short_caption: &str,
    claims: &CaptionClaims,
    evidence: &[EvidencePair],
) -> Result<CaptionJudgement, AgentError> {
    let claims_json = serde_json::to_string_pretty(claims).expect("claims serialize");
    let sub = render_pairs(evidence);
    let request = ChatRequest::llm(Stage::Aggregation)
        .temperature(DETERMINISTIC_TEMPERATURE)
        .system(prompts::CAPTION_JUDGE_SYSTEM.text())
        .user(prompts::CAPTION_JUDGE_USER.render(&[("SHORT_CAPTION", short_caption), ("claims", &claims_json), ("sub", &sub)]));
    let reminder = format!("Use exactly the keys \"has_conflict\" (boolean) and \"caption\" (string). {JSON_REMINDER}");
    let llm = match call_with_reprompt(session, request, &reminder, parse_verdict)? {
        Parsed::Ok(v) => Some(v),
        Parsed::Failed { .. } => None,
    };
    let gate = confidence_gate(claims, evidence);
    let keep = || CaptionVerdict { has_conflict: false, caption: short_caption.to_owned() };
    let verdict = match &llm {
        Some(v) if gate.has_conflict && !v.caption.trim().is_empty() => {
            CaptionVerdict { has_conflict: true, caption: v.caption.trim().to_owned() }
        }
        _ => keep(),
    };
    let agreed = llm.as_ref().is_some_and(|v| v.has_conflict == gate.has_conflict);
    Ok(CaptionJudgement { verdict, gate, llm, agreed })
}

fn parse_verdict(raw: &str) -> Result<CaptionVerdict, String> {
    let map = first_object(raw).ok_or("no JSON object found")?;
    let has_conflict = match map.get("has_conflict") {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => false,
        Some(other) => return Err(format!("`has_conflict` is not a boolean: {other}")),
        None => return Err("missing key `has_conflict`".into()),
    };
    Ok(CaptionVerdict { has_conflict, caption: string_field(&map, "caption")? })
}

pub(crate) fn render_pairs(evidence: &[EvidencePair]) -> String {
    evidence
        .iter()
        .enumerate()
        .map(|(j, p)| format!("Q{n}: {}\nA{n}: {}", p.question, p.raw_answer.trim(), n = j + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::YES_NO_INSTRUCTION;
    use crate::model::scripted::ScriptedBackend;
    use crate::model::{BackendHandle, Backends};

    fn two_women() -> CaptionClaims {
        CaptionClaims {
            subject_head: "woman".into(),
            subject_count: SubjectCount::Two,
            key_object: "umbrella".into(),
            relation: "holding".into(),
            scene: "street".into(),
        }
    }

    fn yn(q: &str, a: &str) -> EvidencePair {
        EvidencePair::new(format!("{q} {YES_NO_INSTRUCTION}"), a)
    }

    fn count(a: &str) -> EvidencePair {
        EvidencePair::new(format!("How many main subjects are there? {GENERIC_COUNT_INSTRUCTION}"), a)
    }

    #[test]
    fn parses_claims_and_rejects_open_counts() {
        let ok = r#"{"subject_head": "Woman", "subject_count": "two", "key_object": "umbrella", "relation": "holding", "scene": ""}"#;
        let claims = parse_claims(ok).unwrap();
        assert_eq!(claims.subject_head, "woman");
        assert_eq!(claims.scene, "unknown");
        assert!(parse_claims(&ok.replace("\"two\"", "\"three\"")).is_err());
        assert!(parse_claims(r#"{"subject_head": "x"}"#).is_err());
    }

    #[test]
    fn direct_no_triggers_the_gate() {
        let gate = confidence_gate(&two_women(), &[yn("Is a woman holding an umbrella?", "no")]);
        assert!(gate.has_conflict);
    }

    #[test]
    fn only_unclear_keeps_the_caption() {
        let gate = confidence_gate(&two_women(), &[yn("Is there an umbrella?", "unclear"), count("unclear")]);
        assert!(!gate.has_conflict);
        assert!(gate.signals.iter().all(|s| *s == SlotSignal::Unclear));
    }

    #[test]
    fn two_consistent_alternatives_trigger_the_gate() {
        let evidence = [count("one"), yn("Is there exactly one woman as the main subject?", "yes")];
        assert!(confidence_gate(&two_women(), &evidence).has_conflict);
        // A single alternative is not enough.
        assert!(!confidence_gate(&two_women(), &evidence[..1]).has_conflict);
    }

    #[test]
    fn a_rejecting_no_blocks_the_alternative() {
        let evidence = [
            count("one"),
            yn("Is there exactly one woman as the main subject?", "yes"),
            yn("Is there exactly one umbrella-holding person, exactly one in total?", "no"),
        ];
        assert!(!confidence_gate(&two_women(), &evidence).has_conflict);
    }

    #[test]
    fn supporting_count_answers_are_support() {
        let evidence = [count("two"), yn("Does the image show exactly two women as the main subjects?", "yes")];
        let gate = confidence_gate(&two_women(), &evidence);
        assert!(!gate.has_conflict);
        assert_eq!(gate.signals, [SlotSignal::Support, SlotSignal::Support]);
    }

    fn judge_backend(reply: &'static str) -> Backends {
        Backends::uniform(BackendHandle::new(ScriptedBackend::new("j", move |_| Ok(reply.to_owned()))))
    }

    #[test]
    fn gate_overrides_an_eager_judge() {
        let backends = judge_backend(r#"{"has_conflict": true, "caption": "A man holds an umbrella."}"#);
        let session = Session::new(&backends);
        let caption = "Two women holding an umbrella on a street.";
        let evidence = [yn("Is there an umbrella?", "yes")];
        let j = caption_judge(&session, caption, &two_women(), &evidence).unwrap();
        assert_eq!(j.verdict, CaptionVerdict { has_conflict: false, caption: caption.into() });
        assert!(!j.agreed);
    }

    #[test]
    fn gate_allows_the_judges_edit() {
        let backends = judge_backend(r#"{"has_conflict": true, "caption": "One woman holding an umbrella on a street."}"#);
        let session = Session::new(&backends);
        let evidence = [count("one"), yn("Is there exactly one woman as the main subject?", "yes")];
        let j = caption_judge(&session, "Two women holding an umbrella on a street.", &two_women(), &evidence).unwrap();
        assert!(j.verdict.has_conflict);
        assert_eq!(j.verdict.caption, "One woman holding an umbrella on a street.");
        assert!(j.agreed);
    }

    #[test]
    fn malformed_judge_keeps_the_original() {
        let backends = judge_backend("I think the caption is fine.");
        let session = Session::new(&backends);
        let evidence = [yn("Is a woman holding an umbrella?", "no")];
        let j = caption_judge(&session, "Two women.", &two_women(), &evidence).unwrap();
        assert_eq!(j.verdict.caption, "Two women.");
        assert!(!j.verdict.has_conflict);
        assert!(j.llm.is_none());
        assert_eq!(session.ledger().total(), 2);
    }
}
