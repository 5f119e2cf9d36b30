//! Regenerates `tests/fixtures/fig2_replay.json`: a scripted "t shirt vs
//! jeans" exchange in which the attacked victim picks "jeans" when asked
//! directly but describes an upper-body garment under every targeted check.
//!
//! ```text
//! cargo run -p pda-core --example record_fig2
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use pda_core::answers::CandidateSet;
use pda_core::exec::Executor;
use pda_core::model::replay::RecordingBackend;
use pda_core::model::scripted::ScriptedBackend;
use pda_core::model::{BackendHandle, Backends, ChatRequest, ModelKind, Stage};
use pda_core::pipeline::{run_direct, run_pda_full, run_pda_pv, Query, Variant, VariantConfig};
use serde_json::json;

const QUESTION: &str = "Which object is more visually prominent in the image?";

/// (jeans-side, t-shirt-side) wording for each logical paraphrase.
const CONTRASTS: [(&str, &str); 5] = [
    ("lower body wear", "upper body wear"),
    ("pants", "shirt"),
    ("leg area", "chest area"),
    ("denim pants", "cotton shirt"),
    ("clothing for legs", "clothing for torso"),
];

const VIEWS: [&str; 5] = [
    "Which item stands out most in the image?",
    "Which object draws the most visual attention in this picture?",
    "What is the most noticeable object in the image?",
    "Which garment is closest to the camera?",
    "Which object is the visual focus of the image?",
];

/// Sub-questions with the attacked victim's answers. The fourth view is
/// decomposed around depth, where the perturbation still wins.
fn sub_questions(view: &str) -> [(serde_json::Value, &'static str); 3] {
    if view.contains("closest to the camera") {
        [
            (json!({"question": "Which garment fills the lower half of the frame?", "answer_type": "phrase"}), "Jeans"),
            (json!({"question": "Is the denim in sharp focus?", "answer_type": "yes_no"}), "Yes"),
            (
                json!({"question": "Which garment is nearer to the lens?", "answer_type": "choice", "options": ["jeans", "t shirt"]}),
                "jeans",
            ),
        ]
    } else {
        [
            (
                json!({"question": "Which body region is most prominent in the image?", "answer_type": "choice", "options": ["upper body", "lower body"]}),
                "Upper body",
            ),
            (json!({"question": "Is a t shirt clearly visible on the person?", "answer_type": "yes_no"}), "Yes."),
            (json!({"question": "What garment covers the largest visible area?", "answer_type": "phrase"}), "A white t-shirt"),
        ]
    }
}

fn all_sub_questions() -> Vec<(String, &'static str)> {
    VIEWS
        .iter()
        .flat_map(|v| sub_questions(v))
        .map(|(q, a)| (q["question"].as_str().unwrap().to_owned(), a))
        .collect()
}

fn agent(req: &ChatRequest) -> String {
    let system = req.system_text().unwrap_or("");
    let user = req.last_user_text();
    match req.stage {
        Stage::Paraphrase if system.contains("generated_questions") => {
            let items: Vec<_> = CONTRASTS
                .iter()
                .map(|(a, b)| json!({"question": format!("{QUESTION} Choose from the following list: (A) {a}, (B) {b}."), "options": [a, b]}))
                .collect();
            let original = format!("{QUESTION} Choose from the following list: (A) jeans, (B) t shirt.");
            format!("```json\n{}\n```", json!({"original_question": original, "generated_questions": items}))
        }
        Stage::Paraphrase => json!({ "candidates": VIEWS }).to_string(),
        Stage::Decomposition if !system.is_empty() => {
            let view = VIEWS.iter().find(|v| user.contains(*v)).expect("known view");
            let subs: Vec<_> = sub_questions(view).into_iter().map(|(q, _)| q).collect();
            json!({"original_question": view, "sub_questions": subs, "answer_logic": "Pick the garment the checks point to."})
                .to_string()
        }
        // Probe readings: one atomic fact against the paraphrased question.
        Stage::Decomposition => {
            let jeans_cues = ["lower half", "denim", "nearer to the lens"];
            if jeans_cues.iter().any(|c| user.contains(c)) { "jeans" } else { "t shirt" }.to_owned()
        }
        _ => "Answer: t shirt".to_owned(),
    }
}

fn victim(req: &ChatRequest) -> String {
    let prompt = req.last_user_text();
    if let Some((_, answer)) = all_sub_questions().into_iter().find(|(q, _)| prompt.starts_with(q.as_str())) {
        return answer.to_owned();
    }
    if let Some((_, upper)) = CONTRASTS.iter().find(|(a, _)| prompt.contains(&format!("(A) {a},"))) {
        let mut chars = upper.chars();
        let first = chars.next().unwrap().to_uppercase();
        return format!("{first}{}.", chars.as_str());
    }
    "Jeans.".to_owned()
}

fn main() -> anyhow::Result<()> {
    let scripted = BackendHandle::new(ScriptedBackend::new("fig2-script", |req| {
        Ok(match req.model {
            ModelKind::Llm => agent(req),
            ModelKind::Vlm => victim(req),
        })
    }));
    let recorder = Arc::new(RecordingBackend::new(scripted));
    let backends = Backends::uniform(BackendHandle::from_arc(recorder.clone()));
    let query = fig2_query();
    let exec = Executor::sequential();

    let direct = run_direct(&query, &backends)?;
    let pv = run_pda_pv(&query, &VariantConfig::new(Variant::Pv), &backends, &exec)?;
    let full = run_pda_full(&query, &VariantConfig::new(Variant::Full), &backends, &exec)?;
    println!("direct: {}", direct.label);
    println!("pv:     {}", pv.final_text().unwrap_or("-"));
    println!("full:   {}", full.final_text().unwrap_or("-"));

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig2_replay.json");
    recorder.script().save(&path)?;
    println!("wrote {} entries to {}", recorder.script().len(), path.display());
    Ok(())
}

fn fig2_query() -> Query {
    Query::structured("fig2", "fig2/person.jpg", QUESTION, CandidateSet::new(["jeans", "t shirt"]).expect("two labels"))
        .with_gold(["t shirt"])
        .adversarial(true)
}
