//! Malformed and awkward agent replies, each with the outcome its parser
//! must produce. Every reply is served for the first call and for the
//! reprompt, so a failing case exhausts its single retry.

use pda_core::agents::{
    aggregate_structured, caption_judge, decompose_caption_verify, decompose_vqa, extract_caption_claims, paraphrase_logical,
    paraphrase_semantic, AgentError, CaptionClaims, ChangeIntensity, SubjectCount,
};
use pda_core::answers::{CandidateSet, EvidencePair, UNCLEAR};
use pda_core::model::scripted::ScriptedBackend;
use pda_core::model::{BackendHandle, Backends, LedgerKey, ModelKind, Session, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agent {
    Semantic,
    Logical,
    Decompose,
    Claims,
    CaptionVerify,
    Aggregate,
    CaptionJudge,
}

impl Agent {
    fn stage(self) -> Stage {
        match self {
            Agent::Semantic | Agent::Logical => Stage::Paraphrase,
            Agent::Decompose | Agent::Claims | Agent::CaptionVerify => Stage::Decomposition,
            Agent::Aggregate | Agent::CaptionJudge => Stage::Aggregation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    /// A typed value on the first reply.
    Parses,
    /// The documented typed error (or sentinel) after exactly one reprompt.
    Rejected,
}

pub struct Case {
    pub name: &'static str,
    pub agent: Agent,
    pub reply: &'static str,
    pub expect: Expect,
}

const fn case(name: &'static str, agent: Agent, reply: &'static str, expect: Expect) -> Case {
    Case { name, agent, reply, expect }
}

use Agent::*;
use Expect::*;

pub const CORPUS: &[Case] = &[
    case("semantic plain", Semantic, r#"{"candidates": ["a?", "b?", "c?"]}"#, Parses),
    case("semantic fenced", Semantic, "```json\n{\"candidates\": [\"a?\", \"b?\", \"c?\"]}\n```", Parses),
    case("semantic prefixed", Semantic, "Sure! Here you go:\n{\"candidates\": [\"a?\", \"b?\", \"c?\"]}", Parses),
    case("semantic trailing prose", Semantic, "{\"candidates\": [\"a?\", \"b?\", \"c?\"]}\nLet me know if you need more.", Parses),
    case("semantic braces in strings", Semantic, r#"{"candidates": ["what is {this}?", "b}?", "{c"]}"#, Parses),
    case("semantic stray brace first", Semantic, "{oops} then {\"candidates\": [\"a\", \"b\", \"c\"]}", Parses),
    case("semantic truncated", Semantic, r#"{"candidates": ["a?", "b?""#, Rejected),
    case("semantic wrong arity", Semantic, r#"{"candidates": ["a?", "b?"]}"#, Rejected),
    case("semantic empty candidate", Semantic, r#"{"candidates": ["a?", "", "c?"]}"#, Rejected),
    case("semantic not an array", Semantic, r#"{"candidates": "a?, b?, c?"}"#, Rejected),
    case("semantic prose only", Semantic, "I'm sorry, I can't help with that.", Rejected),
    case("semantic empty reply", Semantic, "", Rejected),
    case("semantic single quotes", Semantic, "{'candidates': ['a?', 'b?', 'c?']}", Rejected),
    case(
        "logical fenced",
        Logical,
        "```\n{\"generated_questions\": [{\"question\": \"q1\", \"options\": [\"pants\", \"shirt\"]}, {\"question\": \"q2\", \"options\": [\"legs\", \"chest\"]}]}\n```",
        Parses,
    ),
    case(
        "logical one wrong-arity item dropped",
        Logical,
        r#"{"generated_questions": [{"question": "q0", "options": ["x", "y", "z"]}, {"question": "q1", "options": ["pants", "shirt"]}, {"question": "q2", "options": ["legs", "chest"]}]}"#,
        Parses,
    ),
    case("logical all wrong arity", Logical, r#"{"generated_questions": [{"question": "q", "options": ["x"]}, {"question": "q", "options": ["a", "b", "c"]}]}"#, Rejected),
    case("logical truncated", Logical, r#"{"generated_questions": [{"question": "q", "options": ["pa"#, Rejected),
    case("logical duplicate options", Logical, r#"{"generated_questions": [{"question": "q", "options": ["wear", "wear"]}, {"question": "r", "options": ["a", "a"]}]}"#, Rejected),
    case(
        "logical prefixed",
        Logical,
        "Output:\n{\"original_question\": \"q\", \"generated_questions\": [{\"question\": \"q1\", \"options\": [\"pants\", \"shirt\"]}, {\"question\": \"q2\", \"options\": [\"legs\", \"chest\"]}]}",
        Parses,
    ),
    case(
        "decompose slash options",
        Decompose,
        r#"{"sub_questions": [{"question": "Is it red?", "answer_type": "yes_no"}, {"question": "Which side?", "answer_type": "choice", "options": "left/right"}, {"question": "What is it?", "answer_type": "phrase"}]}"#,
        Parses,
    ),
    case(
        "decompose fenced mixed-case types",
        Decompose,
        "```json\n{\"sub_questions\": [{\"question\": \"a?\", \"answer_type\": \"Yes/No\"}, {\"question\": \"b?\", \"answer_type\": \"Phrase\"}, {\"question\": \"c?\", \"answer_type\": \"count\"}]}\n```",
        Parses,
    ),
    case("decompose too few", Decompose, r#"{"sub_questions": [{"question": "a?", "answer_type": "yes_no"}, {"question": "b?", "answer_type": "yes_no"}]}"#, Rejected),
    case(
        "decompose too many",
        Decompose,
        r#"{"sub_questions": [{"question": "a", "answer_type": "phrase"}, {"question": "b", "answer_type": "phrase"}, {"question": "c", "answer_type": "phrase"}, {"question": "d", "answer_type": "phrase"}, {"question": "e", "answer_type": "phrase"}, {"question": "f", "answer_type": "phrase"}]}"#,
        Rejected,
    ),
    case(
        "decompose choice without options",
        Decompose,
        r#"{"sub_questions": [{"question": "a", "answer_type": "choice", "options": ["one"]}, {"question": "b", "answer_type": "phrase"}, {"question": "c", "answer_type": "phrase"}]}"#,
        Rejected,
    ),
    case(
        "decompose unknown answer type",
        Decompose,
        r#"{"sub_questions": [{"question": "a", "answer_type": "essay"}, {"question": "b", "answer_type": "phrase"}, {"question": "c", "answer_type": "phrase"}]}"#,
        Rejected,
    ),
    case(
        "decompose missing question text",
        Decompose,
        r#"{"sub_questions": [{"answer_type": "phrase"}, {"question": "b", "answer_type": "phrase"}, {"question": "c", "answer_type": "phrase"}]}"#,
        Rejected,
    ),
    case("decompose truncated", Decompose, r#"{"sub_questions": [{"question": "a", "answer_type": "phrase"}, {"quest"#, Rejected),
    case(
        "claims plain",
        Claims,
        r#"{"subject_head": "woman", "subject_count": "two", "key_object": "umbrella", "relation": "holding", "scene": "street"}"#,
        Parses,
    ),
    case(
        "claims fenced uppercase",
        Claims,
        "```json\n{\"subject_head\": \"Dog\", \"subject_count\": \"One\", \"key_object\": \"\", \"relation\": \"Running\", \"scene\": \"Park\"}\n```",
        Parses,
    ),
    case(
        "claims count outside the closed set",
        Claims,
        r#"{"subject_head": "dog", "subject_count": "three", "key_object": "ball", "relation": "chasing", "scene": "park"}"#,
        Rejected,
    ),
    case("claims missing keys", Claims, r#"{"subject_head": "dog"}"#, Rejected),
    case(
        "caption verify without instructions",
        CaptionVerify,
        r#"{"sub_questions": ["Is there a dog?", "Is it a park?", "Is the dog running?"]}"#,
        Rejected,
    ),
    case(
        "caption verify valid",
        CaptionVerify,
        r#"{"sub_questions": ["Is there a dog? Answer exactly: 'yes', 'no', or 'unclear'.", "Is this a park? Answer exactly: 'yes', 'no', or 'unclear'.", "Describe the dog's appearance in at most five words. Answer with a short phrase."]}"#,
        Parses,
    ),
    case(
        "caption verify without appearance question",
        CaptionVerify,
        r#"{"sub_questions": ["Is there a dog? Answer exactly: 'yes', 'no', or 'unclear'.", "Is this a park? Answer exactly: 'yes', 'no', or 'unclear'.", "Is the dog running? Answer exactly: 'yes', 'no', or 'unclear'."]}"#,
        Rejected,
    ),
    case("aggregate prefixed answer", Aggregate, "Final answer: T-shirt.", Parses),
    case("aggregate multi-line", Aggregate, "jeans\nbecause the legs are visible", Parses),
    case("aggregate rambling", Aggregate, "Considering all of the evidence provided above it is most likely jeans", Rejected),
    case("aggregate empty", Aggregate, "   ", Rejected),
    case("judge string boolean", CaptionJudge, r#"{"has_conflict": "false", "caption": "A dog."}"#, Parses),
    case("judge fenced", CaptionJudge, "```json\n{\"has_conflict\": true, \"caption\": \"Two dogs.\"}\n```", Parses),
    case("judge non-boolean", CaptionJudge, r#"{"has_conflict": "maybe", "caption": "A dog."}"#, Rejected),
    case("judge missing caption", CaptionJudge, r#"{"has_conflict": false}"#, Rejected),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observed {
    pub parsed: bool,
    pub retries: u64,
    pub detail: String,
}

fn dog_claims() -> CaptionClaims {
    CaptionClaims {
        subject_head: "dog".into(),
        subject_count: SubjectCount::Unknown,
        key_object: "unknown".into(),
        relation: "running".into(),
        scene: "park".into(),
    }
}

fn typed<T: std::fmt::Debug>(r: Result<T, AgentError>) -> (bool, String) {
    match r {
        Ok(v) => (true, format!("{v:?}")),
        Err(e @ (AgentError::Paraphrase { .. } | AgentError::Decomposition { .. } | AgentError::Claims { .. })) => {
            (false, e.to_string())
        }
        Err(other) => panic!("untyped failure: {other}"),
    }
}

pub fn run(case: &Case) -> Observed {
    let reply = case.reply;
    let backends = Backends::uniform(BackendHandle::new(ScriptedBackend::new("corpus", move |_| Ok(reply.to_owned()))));
    let session = Session::new(&backends);
    let options = CandidateSet::new(["jeans", "t shirt"]).unwrap();
    let (parsed, detail) = match case.agent {
        Semantic => typed(paraphrase_semantic(&session, "What is shown?", 3, ChangeIntensity::Medium)),
        Logical => typed(paraphrase_logical(&session, "Which is prominent?", &options, 2)),
        Decompose => typed(decompose_vqa(&session, "What is shown?", 1, 3)),
        Claims => typed(extract_caption_claims(&session, "A dog running in a park.")),
        CaptionVerify => typed(decompose_caption_verify(&session, &dog_claims(), "", "A dog running in a park.", 1, 3)),
        Aggregate => {
            let answer = aggregate_structured(&session, Stage::Aggregation, "Which?", &[EvidencePair::new("q", "a")]).unwrap();
            (answer != UNCLEAR, answer)
        }
        CaptionJudge => {
            let judgement = caption_judge(&session, "A dog.", &dog_claims(), &[]).unwrap();
            (judgement.llm.is_some(), format!("{:?}", judgement.verdict))
        }
    };
    let retries = session.ledger().get(LedgerKey::retry(case.agent.stage(), ModelKind::Llm));
    Observed { parsed, retries, detail }
}

/// Whether the observed outcome is the documented one.
pub fn conforms(case: &Case, observed: &Observed) -> bool {
    match case.expect {
        Parses => observed.parsed && observed.retries == 0,
        Rejected => !observed.parsed && observed.retries == 1,
    }
}
