//! Dataset ingestion, batch evaluation, metrics, persistence, and the
//! smoothing study.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::CandidateSet;
use crate::exec::Executor;
use crate::model::synthetic::{SyntheticBackend, SyntheticConfigError, SyntheticVlmConfig};
use crate::model::{BackendHandle, Backends};
use crate::pipeline::{run_query, verify_budget, BudgetViolation, PipelineError, Variant, VariantConfig};

mod dataset;
mod metrics;
mod oracle;
mod persist;

pub use dataset::{load_dataset, parse_dataset, DatasetError, DatasetItem, Schema, Split};
pub use metrics::{gold_label, score_answer, score_record, RunMetrics, ScoredRecord, ScoringMode};
pub use oracle::{binomial_majority_oracle, OracleError};
pub use persist::{load_run, persist_run, Manifest, PersistError, RunInfo, MANIFEST_FILE, RECORDS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub records: Vec<ScoredRecord>,
    pub metrics: RunMetrics,
    pub violations: Vec<BudgetViolation>,
    pub wall_clock_ms: f64,
}

/// Runs every item through the defense and scores it. Item failures are
/// counted, not fatal; a configuration that cannot run some item is an error
/// before any call is made.
pub fn evaluate(
    items: &[DatasetItem],
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
    scoring: ScoringMode,
) -> Result<Evaluation, PipelineError> {
    for item in items {
        config
            .check_task(item.to_query().kind())
            .map_err(|PipelineError::Config(msg)| PipelineError::Config(format!("item `{}`: {msg}", item.id)))?;
    }
    let start = Instant::now();
    let outcomes = exec.map(items, |_, item| -> Result<ScoredRecord, PipelineError> {
        let query = item.to_query();
        let record = run_query(&query, config, backends, exec)?;
        let score = score_record(&record, &item.gold, scoring);
        Ok(ScoredRecord { record, gold: item.gold.clone(), split: item.split, score })
    });
    let records = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let violations = records.iter().filter(|r| r.record.is_ok()).filter_map(|r| verify_budget(&r.record).err()).collect();
    let metrics = RunMetrics::from_records(&records);
    Ok(Evaluation { records, metrics, violations, wall_clock_ms: start.elapsed().as_secs_f64() * 1e3 })
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("trials must be at least 1")]
    NoTrials,
}

/// One row of the smoothing study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub q: f64,
    pub n: usize,
    pub trials: usize,
    pub accuracy: f64,
    pub oracle: f64,
    pub delta: f64,
    /// Binomial standard error of `accuracy`.
    pub std_error: f64,
}

/// Two-way items whose gold is the synthetic backend's correct label.
pub fn synthetic_items(trials: usize, adversarial: bool) -> Vec<DatasetItem> {
    let candidates = CandidateSet::new(["correct", "wrong"]).expect("static candidates");
    let split = if adversarial { Split::Adversarial } else { Split::Clean };
    (0..trials)
        .map(|i| DatasetItem {
            id: format!("sim-{i:06}"),
            image_ref: format!("synthetic://{i}"),
            question: Some("Which label describes the image?".into()),
            short_caption: None,
            detailed_caption: None,
            candidates: Some(candidates.clone()),
            gold: vec!["correct".into()],
            split,
        })
        .collect()
}

/// PV over `trials` independent synthetic queries, each view correct with
/// probability `q`, compared with the binomial majority oracle.
pub fn simulate_pv(q: f64, n: usize, trials: usize, seed: u64, exec: &Executor) -> Result<SimulationRow, StudyError> {
    if trials == 0 {
        return Err(StudyError::NoTrials);
    }
    let oracle = binomial_majority_oracle(q, n)?;
    let backend = SyntheticBackend::new(SyntheticVlmConfig::binary(q, q, seed))?;
    let backends = Backends::uniform(BackendHandle::new(backend));
    let config = VariantConfig::new(Variant::Pv).with_n(n);
    let eval = evaluate(&synthetic_items(trials, true), &config, &backends, exec, ScoringMode::Exact)?;
    let accuracy = eval.metrics.accuracy.unwrap_or(0.0);
    Ok(SimulationRow {
        q,
        n,
        trials,
        accuracy,
        oracle,
        delta: (accuracy - oracle).abs(),
        std_error: (accuracy * (1.0 - accuracy) / trials as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub n: usize,
    pub k: usize,
    pub accuracy: Option<f64>,
    pub failure_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One evaluation per configuration, in grid order. A cell that cannot run
/// is recorded and the grid continues.
pub fn ablate_k(
    items: &[DatasetItem],
    grid: &[VariantConfig],
    backends: &Backends,
    exec: &Executor,
    scoring: ScoringMode,
) -> Vec<AblationCell> {
    grid.iter()
        .map(|config| {
            let cell = AblationCell {
                variant: config.variant,
                n: config.n_paraphrases,
                k: config.k_atomic,
                accuracy: None,
                failure_count: 0,
                error: None,
            };
            match evaluate(items, config, backends, exec, scoring) {
                Ok(eval) => AblationCell { accuracy: eval.metrics.accuracy, failure_count: eval.metrics.failure_count, ..cell },
                Err(e) => AblationCell { error: Some(e.to_string()), ..cell },
            }
        })
        .collect()
}
