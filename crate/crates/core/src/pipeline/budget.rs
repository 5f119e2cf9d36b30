use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecisionRecord, TaskKind, Variant};
use crate::model::{CallLedger, LedgerKey, ModelKind, Stage};

/// Closed-form per-stage call counts for one query.
///
/// | variant | paraphrase LLM | VLM   | decomposition/judge LLM | aggregation LLM |
/// |---------|----------------|-------|-------------------------|-----------------|
/// | full    | 1              | N·K   | N·K + N                 | 1               |
/// | rjv     | 1              | N     | N                       | 0               |
/// | rda     | 1              | N     | 0                       | 1               |
/// | pv      | 1              | N     | 0                       | 0               |
///
/// Full's third column is N decompositions plus one evidence-reduction call
/// per atomic answer. RJV's third column is its judge, charged to the judging
/// stage.
pub fn expected_budget(variant: Variant, n: usize, k: usize) -> CallLedger {
    let (n, k) = (n as u64, k as u64);
    let base = CallLedger::new().with(Stage::Paraphrase, ModelKind::Llm, 1);
    match variant {
        Variant::Full => base
            .with(Stage::Answering, ModelKind::Vlm, n * k)
            .with(Stage::Decomposition, ModelKind::Llm, n * k + n)
            .with(Stage::Aggregation, ModelKind::Llm, 1),
        Variant::Rjv => base.with(Stage::Answering, ModelKind::Vlm, n).with(Stage::Judging, ModelKind::Llm, n),
        Variant::Rda => base.with(Stage::Answering, ModelKind::Vlm, n).with(Stage::Aggregation, ModelKind::Llm, 1),
        Variant::Pv => base.with(Stage::Answering, ModelKind::Vlm, n),
    }
}

/// Caption chain: 1 paraphrase call, 1 claim extraction plus N verification
/// decompositions, N·K VLM answers, 1 judge call.
pub fn expected_caption_budget(n: usize, k: usize) -> CallLedger {
    let (n, k) = (n as u64, k as u64);
    CallLedger::new()
        .with(Stage::Paraphrase, ModelKind::Llm, 1)
        .with(Stage::Decomposition, ModelKind::Llm, n + 1)
        .with(Stage::Answering, ModelKind::Vlm, n * k)
        .with(Stage::Aggregation, ModelKind::Llm, 1)
}

pub fn expected_for(record: &DecisionRecord) -> CallLedger {
    match record.task {
        TaskKind::Caption => expected_caption_budget(record.n_paraphrases, record.k_atomic),
        _ => expected_budget(record.variant, record.n_paraphrases, record.k_atomic),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetMismatch {
    pub key: LedgerKey,
    pub expected: u64,
    pub actual: u64,
}

impl fmt::Display for BudgetMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.key, self.expected, self.actual)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("budget violation for `{query_id}`: {}", list(.mismatches))]
pub struct BudgetViolation {
    pub query_id: String,
    pub mismatches: Vec<BudgetMismatch>,
}

fn list(mismatches: &[BudgetMismatch]) -> String {
    mismatches.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Compares a record's primary calls with its closed-form budget. Retries are
/// excluded.
pub fn verify_budget(record: &DecisionRecord) -> Result<(), BudgetViolation> {
    let expected = expected_for(record);
    let actual = record.ledger.primary_only();
    let keys: BTreeSet<LedgerKey> = expected.iter().chain(actual.iter()).map(|(k, _)| k).collect();
    let mismatches: Vec<BudgetMismatch> = keys
        .into_iter()
        .filter_map(|key| {
            let (e, a) = (expected.get(key), actual.get(key));
            (e != a).then_some(BudgetMismatch { key, expected: e, actual: a })
        })
        .collect();
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(BudgetViolation { query_id: record.query_id.clone(), mismatches })
    }
}
