//! The four defense variants, the caption chain, and the call-budget contract.
//!
//! Every run produces a [`DecisionRecord`] holding the full lineage of the
//! decision (paraphrases, atomic questions, evidence, per-paraphrase labels,
//! the vote tally) together with the per-query [`CallLedger`]. Agent failures
//! do not abort a batch: the record is marked failed and keeps whatever
//! lineage was produced before the error.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AtomicQuestionSet, CaptionClaims, CaptionVerdict, ChangeIntensity, LogicalParaphraseSet, ParaphraseSet};
use crate::answers::{CandidateSet, EvidenceSet, VoteTally};
use crate::exec::Executor;
use crate::model::{Backends, CallLedger, Session};

mod budget;
mod caption;
mod variants;
mod vlm;

pub use budget::{expected_budget, expected_caption_budget, expected_for, verify_budget, BudgetMismatch, BudgetViolation};
pub use caption::run_caption_pipeline;
pub use variants::{run_direct, run_pda_full, run_pda_pv, run_pda_rda, run_pda_rjv, DirectAnswer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Rjv,
    Rda,
    Pv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Self::Full, Self::Rjv, Self::Rda, Self::Pv];

    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Rjv => "rjv",
            Self::Rda => "rda",
            Self::Pv => "pv",
        }
    }

    /// Whether the victim is asked for a rationale alongside its answer.
    pub const fn uses_rationale(self) -> bool {
        matches!(self, Self::Rjv | Self::Rda)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let key = lower.strip_prefix("pda-").unwrap_or(&lower);
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full|rjv|rda|pv)"))
    }
}

pub const MAX_ATOMIC: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub n_paraphrases: usize,
    pub k_atomic: usize,
    #[serde(default)]
    pub change_intensity: ChangeIntensity,
    /// Informational for full/pv; rjv and rda always request rationales.
    #[serde(default)]
    pub require_rationale: bool,
    /// Answer with the undefended model when an agent fails, instead of
    /// marking the query failed.
    #[serde(default)]
    pub fallback_undefended: bool,
}

impl VariantConfig {
    /// Defaults for VQA and classification: N = 5, K = 3.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            n_paraphrases: 5,
            k_atomic: 3,
            change_intensity: ChangeIntensity::Medium,
            require_rationale: variant.uses_rationale(),
            fallback_undefended: false,
        }
    }

    /// Defaults for captioning: N = 2, K = 5.
    pub fn caption(variant: Variant) -> Self {
        Self { n_paraphrases: 2, k_atomic: 5, ..Self::new(variant) }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_paraphrases = n;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_atomic = k;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_paraphrases == 0 {
            return Err(PipelineError::Config("n_paraphrases must be at least 1".into()));
        }
        if !(1..=MAX_ATOMIC).contains(&self.k_atomic) {
            return Err(PipelineError::Config(format!("k_atomic must be in 1..={MAX_ATOMIC}, got {}", self.k_atomic)));
        }
        Ok(())
    }

    /// Checks that this configuration can run `task`.
    pub fn check_task(&self, task: TaskKind) -> Result<(), PipelineError> {
        self.validate()?;
        match (self.variant, task) {
            (Variant::Pv, TaskKind::OpenForm | TaskKind::Caption) => {
                Err(PipelineError::Config("variant pv requires a task with candidate options".into()))
            }
            (Variant::Rjv | Variant::Rda, TaskKind::Caption) => {
                Err(PipelineError::Config(format!("variant {} does not support captioning; use full", self.variant)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Structured {
        candidates: CandidateSet,
    },
    OpenForm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        short_caption: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detailed_caption: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Structured,
    OpenForm,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub image_ref: String,
    pub text: String,
    pub task: Task,
    /// Reference labels or captions; empty when unscored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<String>,
    /// Only consulted by the synthetic backend.
    #[serde(default)]
    pub adversarial: bool,
}

impl Query {
    pub fn structured(id: &str, image_ref: &str, text: &str, candidates: CandidateSet) -> Self {
        Self::with_task(id, image_ref, text, Task::Structured { candidates })
    }

    pub fn open_form(id: &str, image_ref: &str, text: &str) -> Self {
        Self::with_task(id, image_ref, text, Task::OpenForm { short_caption: None, detailed_caption: None })
    }

    pub fn caption(id: &str, image_ref: &str, short_caption: &str, detailed_caption: &str) -> Self {
        let task = Task::OpenForm {
            short_caption: Some(short_caption.to_owned()),
            detailed_caption: Some(detailed_caption.to_owned()),
        };
        Self::with_task(id, image_ref, short_caption, task)
    }

    fn with_task(id: &str, image_ref: &str, text: &str, task: Task) -> Self {
        Self { id: id.into(), image_ref: image_ref.into(), text: text.into(), task, gold: Vec::new(), adversarial: false }
    }

    pub fn with_gold<I: IntoIterator<Item = S>, S: Into<String>>(mut self, gold: I) -> Self {
        self.gold = gold.into_iter().map(Into::into).collect();
        self
    }

    pub fn adversarial(mut self, adversarial: bool) -> Self {
        self.adversarial = adversarial;
        self
    }

    pub fn kind(&self) -> TaskKind {
        match &self.task {
            Task::Structured { .. } => TaskKind::Structured,
            Task::OpenForm { short_caption: Some(_), .. } => TaskKind::Caption,
            Task::OpenForm { .. } => TaskKind::OpenForm,
        }
    }

    pub fn candidates(&self) -> Option<&CandidateSet> {
        match &self.task {
            Task::Structured { candidates } => Some(candidates),
            Task::OpenForm { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    /// An agent or backend error stopped the defense.
    Failed { error: String },
    /// The defense failed and the undefended answer was used instead.
    Fallback { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paraphrases {
    Semantic(ParaphraseSet),
    Logical(LogicalParaphraseSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseAnswer {
    pub index: usize,
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalDecision {
    Label(String),
    Caption(CaptionVerdict),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub query_id: String,
    pub variant: Variant,
    pub task: TaskKind,
    pub n_paraphrases: usize,
    pub k_atomic: usize,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrases: Option<Paraphrases>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims: Option<CaptionClaims>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decompositions: Vec<AtomicQuestionSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceSet>,
    #[serde(default)]
    pub per_paraphrase_answers: Vec<ParaphraseAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_decision: Option<FinalDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<VoteTally>,
    pub ledger: CallLedger,
    /// Milliseconds per phase.
    #[serde(default)]
    pub timing: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl DecisionRecord {
    fn start(query: &Query, config: &VariantConfig) -> Self {
        Self {
            query_id: query.id.clone(),
            variant: config.variant,
            task: query.kind(),
            n_paraphrases: config.n_paraphrases,
            k_atomic: config.k_atomic,
            status: RecordStatus::Ok,
            paraphrases: None,
            claims: None,
            decompositions: Vec::new(),
            evidence: Vec::new(),
            per_paraphrase_answers: Vec::new(),
            final_decision: None,
            tally: None,
            ledger: CallLedger::new(),
            timing: BTreeMap::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, RecordStatus::Failed { .. })
    }

    /// Final label, or the final caption for caption runs.
    pub fn final_text(&self) -> Option<&str> {
        match self.final_decision.as_ref()? {
            FinalDecision::Label(l) => Some(l),
            FinalDecision::Caption(v) => Some(&v.caption),
        }
    }

    /// Copy with wall-clock fields cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { timing: BTreeMap::new(), ..self.clone() }
    }

    fn time<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        *self.timing.entry(phase.to_owned()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

/// Runs `query` under `config`, dispatching on variant and task.
pub fn run_query(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    match config.variant {
        Variant::Full => run_pda_full(query, config, backends, exec),
        Variant::Rjv => run_pda_rjv(query, config, backends, exec),
        Variant::Rda => run_pda_rda(query, config, backends, exec),
        Variant::Pv => run_pda_pv(query, config, backends, exec),
    }
}

/// Shared driver: runs `body` in a fresh per-query session and turns an
/// agent error into a failed (or fallback) record.
fn drive(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    body: impl FnOnce(&Session<'_>, &mut DecisionRecord) -> Result<(), AgentError>,
) -> DecisionRecord {
    let session = Session::for_query(backends, &query.id, query.adversarial);
    let mut record = DecisionRecord::start(query, config);
    if let Err(err) = body(&session, &mut record) {
        let error = err.to_string();
        record.diagnostics.push(format!("defense aborted: {error}"));
        record.status = RecordStatus::Failed { error: error.clone() };
        if config.fallback_undefended {
            match undefended(&session, query) {
                Ok(decision) => {
                    record.final_decision = Some(decision);
                    record.status = RecordStatus::Fallback { error };
                }
                Err(fallback_err) => record.diagnostics.push(format!("undefended fallback failed: {fallback_err}")),
            }
        }
    }
    record.ledger = session.ledger();
    record
}

fn undefended(session: &Session<'_>, query: &Query) -> Result<FinalDecision, AgentError> {
    match &query.task {
        Task::OpenForm { short_caption: Some(caption), .. } => {
            Ok(FinalDecision::Caption(CaptionVerdict { has_conflict: false, caption: caption.clone() }))
        }
        _ => Ok(FinalDecision::Label(variants::direct_label(session, query)?.1)),
    }
}
