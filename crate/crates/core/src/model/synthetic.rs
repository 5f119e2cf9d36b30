//! Seeded stand-in for a victim VLM, plus well-formed scripted agent replies.
//!
//! VLM answers are drawn from a [`SyntheticVlmConfig`]: the correct label with
//! probability `q_clean` (or `q_adv` for adversarial queries), otherwise a
//! uniformly chosen wrong label. Each draw is keyed by the seed and the
//! request content (query id, image, prompt, and the occurrence number of that
//! exact request), so results do not depend on scheduling order.
//!
//! LLM-stage requests get deterministic, contract-conforming replies so the
//! full pipeline can run offline.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendError, CallContext, ChatBackend, ChatRequest, ChatResponse, ModelKind, Role, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVlmConfig {
    pub candidate_answers: Vec<String>,
    pub correct_label: String,
    pub q_clean: f64,
    pub q_adv: f64,
    pub seed: u64,
    /// Independent draw per call. When false, every call for the same query
    /// shares one draw (fully correlated views).
    #[serde(default = "default_true")]
    pub independence: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticConfigError {
    #[error("candidate_answers is empty")]
    NoCandidates,
    #[error("correct_label `{0}` is not among candidate_answers")]
    UnknownCorrect(String),
    #[error("probabilities must satisfy 0 <= q_adv <= q_clean <= 1 (got q_adv={q_adv}, q_clean={q_clean})")]
    Probabilities { q_adv: f64, q_clean: f64 },
}

impl SyntheticVlmConfig {
    /// Two-way task with labels `correct` and `wrong`.
    pub fn binary(q_clean: f64, q_adv: f64, seed: u64) -> Self {
        Self {
            candidate_answers: vec!["correct".into(), "wrong".into()],
            correct_label: "correct".into(),
            q_clean,
            q_adv,
            seed,
            independence: true,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticConfigError> {
        if self.candidate_answers.is_empty() {
            return Err(SyntheticConfigError::NoCandidates);
        }
        if !self.candidate_answers.contains(&self.correct_label) {
            return Err(SyntheticConfigError::UnknownCorrect(self.correct_label.clone()));
        }
        let ordered = 0.0 <= self.q_adv && self.q_adv <= self.q_clean && self.q_clean <= 1.0;
        if !ordered {
            return Err(SyntheticConfigError::Probabilities { q_adv: self.q_adv, q_clean: self.q_clean });
        }
        Ok(())
    }

    pub fn accuracy(&self, adversarial: bool) -> f64 {
        if adversarial {
            self.q_adv
        } else {
            self.q_clean
        }
    }
}

/// One synthetic VLM answer.
pub fn synthetic_answer<R: Rng + ?Sized>(config: &SyntheticVlmConfig, adversarial: bool, rng: &mut R) -> String {
    let q = config.accuracy(adversarial);
    let wrong: Vec<&String> = config.candidate_answers.iter().filter(|c| **c != config.correct_label).collect();
    // Always consume both draws so the stream position is independent of the outcome.
    let hit = rng.random::<f64>() < q;
    let pick = rng.random_range(0..wrong.len().max(1));
    if hit || wrong.is_empty() {
        config.correct_label.clone()
    } else {
        wrong[pick].clone()
    }
}

pub struct SyntheticBackend {
    id: String,
    config: SyntheticVlmConfig,
    occurrences: Mutex<HashMap<[u8; 32], u32>>,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticVlmConfig) -> Result<Self, SyntheticConfigError> {
        config.validate()?;
        Ok(Self { id: format!("synthetic:seed={}", config.seed), config, occurrences: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &SyntheticVlmConfig {
        &self.config
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.config.seed.to_le_bytes());
        let correlation = request.correlation_id.as_deref().or(request.image_ref()).unwrap_or("");
        hasher.update((correlation.len() as u64).to_le_bytes());
        hasher.update(correlation.as_bytes());
        if self.config.independence {
            for m in &request.messages {
                hasher.update(m.role.as_str().as_bytes());
                hasher.update((m.content.len() as u64).to_le_bytes());
                hasher.update(m.content.as_bytes());
                hasher.update(m.image_ref.as_deref().unwrap_or("").as_bytes());
            }
            let content: [u8; 32] = hasher.finalize().into();
            let occurrence = {
                let mut map = self.occurrences.lock().unwrap_or_else(|p| p.into_inner());
                let slot = map.entry(content).or_insert(0);
                let n = *slot;
                *slot += 1;
                n
            };
            let mut hasher = Sha256::new();
            hasher.update(content);
            hasher.update(occurrence.to_le_bytes());
            seeded(hasher.finalize().into())
        } else {
            seeded(hasher.finalize().into())
        }
    }

    fn vlm_reply(&self, request: &ChatRequest) -> String {
        let mut rng = self.rng_for(request);
        let label = synthetic_answer(&self.config, request.adversarial_hint, &mut rng);
        if request.last_user_text().contains("Rationale:") {
            format!("Answer: {label}\nRationale: the visible evidence points to {label}.")
        } else {
            label
        }
    }

    fn llm_reply(&self, request: &ChatRequest) -> String {
        let system = request.system_text().unwrap_or("");
        // Reprompts append turns; the task itself is always the first user turn.
        let user = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        let last = request.last_user_text();
        match request.stage {
            Stage::Paraphrase if system.contains("generated_questions") => {
                let n = number_after(last, "Generate exactly ").or_else(|| number_after(user, "Generate exactly ")).unwrap_or(1);
                let question = user.lines().nth(1).unwrap_or("").trim();
                let items: Vec<_> = (1..=n)
                    .map(|i| json!({ "question": format!("{question} (view {i})"), "options": self.config.candidate_answers }))
                    .collect();
                json!({ "original_question": question, "generated_questions": items }).to_string()
            }
            Stage::Paraphrase => {
                let n = number_after(user, "num_candidates: ").unwrap_or(1);
                let sentence = value_after(user, "input_sentence: ").unwrap_or("");
                let candidates: Vec<_> = (1..=n).map(|i| format!("{sentence} (view {i})")).collect();
                json!({ "candidates": candidates }).to_string()
            }
            Stage::Decomposition if system.starts_with("You extract atomic visual claims") => json!({
                "subject_head": "unknown", "subject_count": "unknown", "key_object": "unknown",
                "relation": "unknown", "scene": "unknown",
            })
            .to_string(),
            Stage::Decomposition if system.starts_with("You design verification sub-questions") => {
                let n = number_after(user, "Write exactly ").unwrap_or(3);
                let questions: Vec<_> = (1..=n)
                    .map(|i| format!("Is caption claim {i} visible in the image? Answer exactly: 'yes', 'no', or 'unclear'."))
                    .collect();
                json!({ "sub_questions": questions }).to_string()
            }
            Stage::Decomposition if system.starts_with("You are a visual reasoning expert") => {
                let n = number_after(user, "Generate exactly ").unwrap_or(3);
                let question = value_after(user, "Input: ").unwrap_or("").trim_matches('"');
                let subs: Vec<_> = (1..=n)
                    .map(|i| json!({ "id": i, "question": format!("Probe {i}: {question}"), "answer_type": "phrase" }))
                    .collect();
                json!({ "original_question": question, "sub_questions": subs, "answer_logic": "Follow the majority of probes." })
                    .to_string()
            }
            Stage::Judging => {
                let answer = block_after(user, "Model answer:").unwrap_or("unclear");
                json!({ "label": answer, "confidence": 1.0 }).to_string()
            }
            Stage::Aggregation if system.starts_with("COCO-style caption judge") => {
                let caption = block_after(user, "Short caption:").unwrap_or("");
                json!({ "has_conflict": false, "caption": caption }).to_string()
            }
            // Per-probe, per-paraphrase and global aggregation: plurality of listed answers.
            _ => plurality(user.lines().filter_map(answer_line)).unwrap_or_else(|| "unclear".to_owned()),
        }
    }
}

impl ChatBackend for SyntheticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest, _ctx: &CallContext<'_>) -> Result<ChatResponse, BackendError> {
        let text = match request.model {
            ModelKind::Vlm => self.vlm_reply(request),
            ModelKind::Llm => self.llm_reply(request),
        };
        Ok(ChatResponse { text, latency_ms: 0, backend_id: self.id.clone() })
    }
}

fn seeded(digest: [u8; 32]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest)
}

fn value_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.trim_start_matches("- ").strip_prefix(marker)).map(str::trim)
}

fn number_after(text: &str, marker: &str) -> Option<usize> {
    let start = text.find(marker)? + marker.len();
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// First non-empty line after a header line.
fn block_after<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let mut lines = text.lines().skip_while(|l| l.trim() != header);
    lines.next()?;
    lines.map(str::trim).find(|l| !l.is_empty())
}

/// `A3: answer` style evidence lines.
fn answer_line(line: &str) -> Option<&str> {
    let rest = line.trim().strip_prefix('A')?;
    let colon = rest.find(':')?;
    rest[..colon].chars().all(|c| c.is_ascii_digit()).then(|| rest[colon + 1..].trim())
}

fn plurality<'a>(answers: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for a in answers {
        match counts.iter_mut().find(|(k, _)| *k == a) {
            Some((_, n)) => *n += 1,
            None => counts.push((a, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max()?;
    counts.iter().find(|(_, n)| *n == best).map(|(k, _)| (*k).to_owned())
}
