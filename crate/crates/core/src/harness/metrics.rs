use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use crate::answers::{normalize_answer, UNCLEAR};
use crate::pipeline::{DecisionRecord, RecordStatus, TaskKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// 1 when the normalized final answer equals the normalized gold label
    /// (the most frequent gold answer when several are given).
    #[default]
    Exact,
    /// VQA consensus: min(#matching gold answers / 3, 1).
    VqaSoft,
}

/// A decision record plus what it was scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    #[serde(flatten)]
    pub record: DecisionRecord,
    #[serde(default)]
    pub gold: Vec<String>,
    #[serde(default)]
    pub split: Split,
    /// `None` for failed, caption, and gold-less items.
    pub score: Option<f64>,
}

/// Most frequent normalized gold answer; first seen wins ties.
pub fn gold_label(gold: &[String]) -> Option<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for g in gold.iter().map(|g| normalize_answer(g)).filter(|g| g != UNCLEAR) {
        match counts.iter_mut().find(|(k, _)| *k == g) {
            Some((_, n)) => *n += 1,
            None => counts.push((g, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max()?;
    counts.into_iter().find(|(_, n)| *n == best).map(|(k, _)| k)
}

pub fn score_answer(answer: &str, gold: &[String], mode: ScoringMode) -> Option<f64> {
    let answer = normalize_answer(answer);
    match mode {
        ScoringMode::Exact => gold_label(gold).map(|g| if g == answer { 1.0 } else { 0.0 }),
        ScoringMode::VqaSoft if gold.is_empty() => None,
        ScoringMode::VqaSoft => {
            let matches = gold.iter().filter(|g| normalize_answer(g) == answer).count();
            Some((matches as f64 / 3.0).min(1.0))
        }
    }
}

pub fn score_record(record: &DecisionRecord, gold: &[String], mode: ScoringMode) -> Option<f64> {
    if record.is_failed() || record.task == TaskKind::Caption {
        return None;
    }
    score_answer(record.final_text()?, gold, mode)
}

/// Aggregate metrics over one run. Every item lands in exactly one of
/// `n_scored`, `failure_count`, `n_unscored`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_items: usize,
    pub n_scored: usize,
    pub n_unscored: usize,
    pub failure_count: usize,
    /// Items answered by the undefended fallback (a subset of scored or
    /// unscored items).
    pub fallback_count: usize,
    pub score_sum: f64,
    pub accuracy: Option<f64>,
    /// Fraction of completed multi-view items whose paraphrase answers all
    /// agree.
    pub agreement_rate: Option<f64>,
    /// Mean of (top score − runner-up score) / total weight.
    pub mean_vote_margin: Option<f64>,
    /// Mean calls per item, keyed by ledger key.
    pub mean_calls_per_item: BTreeMap<String, f64>,
    pub budget_violations: usize,
}

impl RunMetrics {
    /// Recomputes every metric from records; budget violations are
    /// re-checked against the closed forms.
    pub fn from_records(records: &[ScoredRecord]) -> Self {
        let mut m = RunMetrics { n_items: records.len(), ..Default::default() };
        let mut agree = (0usize, 0usize);
        let mut margins = (0.0f64, 0usize);
        let mut calls: BTreeMap<String, u64> = BTreeMap::new();
        for r in records {
            let rec = &r.record;
            for (key, n) in rec.ledger.iter() {
                *calls.entry(key.to_string()).or_default() += n;
            }
            match (&rec.status, r.score) {
                (RecordStatus::Failed { .. }, _) => m.failure_count += 1,
                (_, Some(score)) => {
                    m.n_scored += 1;
                    m.score_sum += score;
                }
                (_, None) => m.n_unscored += 1,
            }
            if matches!(rec.status, RecordStatus::Fallback { .. }) {
                m.fallback_count += 1;
            }
            if rec.is_ok() {
                if crate::pipeline::verify_budget(rec).is_err() {
                    m.budget_violations += 1;
                }
                if let Some(first) = rec.per_paraphrase_answers.first() {
                    agree.1 += 1;
                    if first.label != UNCLEAR && rec.per_paraphrase_answers.iter().all(|a| a.label == first.label) {
                        agree.0 += 1;
                    }
                }
                if let Some(margin) = rec.tally.as_ref().and_then(|t| t.margin()) {
                    margins.0 += margin;
                    margins.1 += 1;
                }
            }
        }
        m.accuracy = (m.n_scored > 0).then(|| m.score_sum / m.n_scored as f64);
        m.agreement_rate = (agree.1 > 0).then(|| agree.0 as f64 / agree.1 as f64);
        m.mean_vote_margin = (margins.1 > 0).then(|| margins.0 / margins.1 as f64);
        if !records.is_empty() {
            m.mean_calls_per_item = calls.into_iter().map(|(k, n)| (k, n as f64 / records.len() as f64)).collect();
        }
        m
    }
}
