//! Answer canonicalization, candidate matching, and deterministic voting.
//!
//! Normalization is purely lexical: case, surrounding punctuation, leading
//! articles, whitespace. Semantic canonicalization (e.g. "upwards" to "up")
//! is left to the aggregation prompt.

use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel for an answer that carries no usable evidence. Never wins a vote.
pub const UNCLEAR: &str = "unclear";

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(raw: &str) -> String {
    let mut current = normalize_once(raw);
    for _ in 0..16 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        UNCLEAR.to_owned()
    } else {
        current
    }
}

fn normalize_once(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let mut collapsed = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    while let Some(rest) = strip_article(&collapsed) {
        collapsed = rest.to_owned();
    }
    collapsed
}

/// Remainder after a leading article token, if anything follows it.
fn strip_article(text: &str) -> Option<&str> {
    let end = text.find(|c: char| !c.is_alphanumeric())?;
    let separator = text[end..].chars().next()?;
    if separator == '-' || !ARTICLES.contains(&&text[..end]) {
        return None;
    }
    let rest = text[end..].trim_start_matches(|c: char| !c.is_alphanumeric());
    (!rest.is_empty()).then_some(rest)
}

/// Drops a leading "The answer is:"-style preamble, then normalizes.
pub fn extract_short_answer(raw: &str) -> String {
    static PREAMBLE: OnceLock<Regex> = OnceLock::new();
    let re = PREAMBLE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:the\s+)?(?:final\s+|short\s+)?answer\s*(?:is)?\s*[:\-]?\s*").expect("static regex")
    });
    let stripped = re.replace(raw.trim(), "");
    if stripped.trim().is_empty() {
        normalize_answer(raw)
    } else {
        normalize_answer(&stripped)
    }
}

pub fn word_count(answer: &str) -> usize {
    answer.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CandidateError {
    #[error("candidate set is empty")]
    Empty,
    #[error("candidate `{0}` appears twice after normalization")]
    Duplicate(String),
    #[error("`unclear` is reserved and cannot be a candidate")]
    Reserved,
}

/// Ordered, duplicate-free set of normalized labels. Order breaks ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CandidateSet {
    labels: Vec<String>,
}

impl CandidateSet {
    pub fn new<I, S>(labels: I) -> Result<Self, CandidateError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            let norm = normalize_answer(label.as_ref());
            if norm == UNCLEAR {
                return Err(CandidateError::Reserved);
            }
            if out.contains(&norm) {
                return Err(CandidateError::Duplicate(norm));
            }
            out.push(norm);
        }
        if out.is_empty() {
            return Err(CandidateError::Empty);
        }
        Ok(Self { labels: out })
    }

    /// Open-vocabulary set: distinct normalized answers in first-seen order,
    /// sentinel excluded. `None` when nothing usable was observed.
    pub fn from_observed<I, S>(answers: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut labels: Vec<String> = Vec::new();
        for a in answers {
            let norm = normalize_answer(a.as_ref());
            if norm != UNCLEAR && !labels.contains(&norm) {
                labels.push(norm);
            }
        }
        (!labels.is_empty()).then_some(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Comma-separated list as shown to models.
    pub fn display_list(&self) -> String {
        self.labels.join(", ")
    }
}

impl TryFrom<Vec<String>> for CandidateSet {
    type Error = CandidateError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(labels)
    }
}

impl From<CandidateSet> for Vec<String> {
    fn from(set: CandidateSet) -> Self {
        set.labels
    }
}

/// True when `needle`'s words occur contiguously in `hay`'s words. Hyphens
/// separate words, so "t-shirt" contains "t shirt".
fn contains_words(hay: &str, needle: &str) -> bool {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c.is_whitespace() || c == '-').filter(|w| !w.is_empty()).map(str::to_owned).collect()
    };
    let hay = split(hay);
    let needle = split(needle);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Index of the candidate an answer refers to.
///
/// Exact match first, then whole-word containment in either direction. A
/// containment hit on two or more candidates is ambiguous and unmatched.
pub fn match_index(answer: &str, candidates: &CandidateSet) -> Option<usize> {
    let answer = normalize_answer(answer);
    if answer == UNCLEAR {
        return None;
    }
    if let Some(i) = candidates.position(&answer) {
        return Some(i);
    }
    let mut hits = candidates
        .labels
        .iter()
        .enumerate()
        .filter(|(_, c)| contains_words(&answer, c) || contains_words(c, &answer))
        .map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Some(i),
        _ => None,
    }
}

pub fn map_to_candidates<'c>(answer: &str, candidates: &'c CandidateSet) -> Option<&'c str> {
    match_index(answer, candidates).map(|i| candidates.labels[i].as_str())
}

/// Evidence scores over a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    /// Summed weight per candidate, in candidate order.
    pub scores: IndexMap<String, f64>,
    /// Number of included votes per candidate.
    pub votes: IndexMap<String, u32>,
    pub total_weight: f64,
    /// Votes dropped as unclear or unmatched.
    pub excluded: u32,
}

impl VoteTally {
    fn empty(candidates: &CandidateSet) -> Self {
        Self {
            scores: candidates.labels.iter().map(|l| (l.clone(), 0.0)).collect(),
            votes: candidates.labels.iter().map(|l| (l.clone(), 0)).collect(),
            total_weight: 0.0,
            excluded: 0,
        }
    }

    pub fn score(&self, label: &str) -> f64 {
        self.scores.get(label).copied().unwrap_or(0.0)
    }

    /// Labels that received at least one vote and share the top score,
    /// in candidate order.
    pub fn leaders(&self) -> Vec<&str> {
        let contenders = || self.scores.iter().filter(|(l, _)| self.votes[l.as_str()] > 0);
        let Some(best) = contenders().map(|(_, s)| *s).reduce(f64::max) else {
            return Vec::new();
        };
        contenders().filter(|(_, s)| **s == best).map(|(l, _)| l.as_str()).collect()
    }

    /// Argmax with candidate-order tie-break; the sentinel when nothing counted.
    pub fn winner(&self) -> String {
        self.leaders().first().map_or_else(|| UNCLEAR.to_owned(), |l| (*l).to_owned())
    }

    /// Gap between the two highest scores as a fraction of the total weight.
    pub fn margin(&self) -> Option<f64> {
        if self.total_weight <= 0.0 {
            return None;
        }
        let mut sorted: Vec<f64> = self.scores.values().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let second = sorted.get(1).copied().unwrap_or(0.0);
        Some((sorted[0] - second) / self.total_weight)
    }

    pub fn n_votes(&self) -> u32 {
        self.votes.values().sum::<u32>() + self.excluded
    }
}

pub fn weighted_scores<'a, I>(votes: I, candidates: &CandidateSet) -> VoteTally
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut tally = VoteTally::empty(candidates);
    for (vote, weight) in votes {
        match match_index(vote, candidates) {
            Some(i) => {
                let label = &candidates.labels[i];
                let weight = if weight.is_finite() { weight.max(0.0) } else { 0.0 };
                tally.scores[label.as_str()] += weight;
                tally.votes[label.as_str()] += 1;
                tally.total_weight += weight;
            }
            None => tally.excluded += 1,
        }
    }
    tally
}

/// E(y): number of answers mapping to each candidate.
pub fn evidence_scores<S: AsRef<str>>(answers: &[S], candidates: &CandidateSet) -> VoteTally {
    weighted_scores(answers.iter().map(|a| (a.as_ref(), 1.0)), candidates)
}

pub fn majority_vote<S: AsRef<str>>(votes: &[S], candidates: &CandidateSet) -> String {
    evidence_scores(votes, candidates).winner()
}

pub fn weighted_vote<'a, I>(votes: I, candidates: &CandidateSet) -> String
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    weighted_scores(votes, candidates).winner()
}

/// Maps an answer given in a logical paraphrase's option wording back to the
/// original option at the same position.
pub fn map_pv_option(answer: &str, item_options: &[String], original_options: &[String]) -> Option<String> {
    if item_options.len() != original_options.len() {
        return None;
    }
    let item_set = CandidateSet::new(item_options).ok()?;
    if let Some(i) = match_index(answer, &item_set) {
        return Some(normalize_answer(&original_options[i]));
    }
    // Identity positions: the model may answer in the original wording.
    let original_set = CandidateSet::new(original_options).ok()?;
    map_to_candidates(answer, &original_set).map(str::to_owned)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePair {
    pub question: String,
    pub raw_answer: String,
    pub answer: String,
}

impl EvidencePair {
    pub fn new(question: impl Into<String>, raw_answer: impl Into<String>) -> Self {
        let raw_answer = raw_answer.into();
        let answer = normalize_answer(&raw_answer);
        Self { question: question.into(), raw_answer, answer }
    }
}

/// Ordered (atomic question, answer) pairs gathered for one paraphrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub paraphrase_index: usize,
    pub pairs: Vec<EvidencePair>,
}

impl EvidenceSet {
    pub fn new(paraphrase_index: usize) -> Self {
        Self { paraphrase_index, pairs: Vec::new() }
    }

    pub fn push(&mut self, question: impl Into<String>, raw_answer: impl Into<String>) {
        self.pairs.push(EvidencePair::new(question, raw_answer));
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Copy without sentinel answers.
    pub fn without_unclear(&self) -> EvidenceSet {
        EvidenceSet {
            paraphrase_index: self.paraphrase_index,
            pairs: self.pairs.iter().filter(|p| p.answer != UNCLEAR).cloned().collect(),
        }
    }
}
