use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Attempt, ModelKind, Stage};

/// Ledger key: which stage issued the call, against which model kind, and
/// whether it was a reprompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct LedgerKey {
    pub stage: Stage,
    pub model: ModelKind,
    pub attempt: Attempt,
}

impl LedgerKey {
    pub const fn primary(stage: Stage, model: ModelKind) -> Self {
        Self { stage, model, attempt: Attempt::Primary }
    }

    pub const fn retry(stage: Stage, model: ModelKind) -> Self {
        Self { stage, model, attempt: Attempt::Retry }
    }
}

impl From<LedgerKey> for String {
    fn from(key: LedgerKey) -> Self {
        key.to_string()
    }
}

impl TryFrom<String> for LedgerKey {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for LedgerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.stage, self.model)?;
        if self.attempt == Attempt::Retry {
            f.write_str("/retry")?;
        }
        Ok(())
    }
}

impl FromStr for LedgerKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('/');
        let stage = parts.next().ok_or("empty ledger key")?.parse::<Stage>()?;
        let model = parts
            .next()
            .ok_or_else(|| format!("ledger key `{s}` has no model kind"))?
            .parse::<ModelKind>()?;
        let attempt = match parts.next() {
            None => Attempt::Primary,
            Some("retry") => Attempt::Retry,
            Some(other) => return Err(format!("unknown ledger key suffix `{other}`")),
        };
        if parts.next().is_some() {
            return Err(format!("malformed ledger key `{s}`"));
        }
        Ok(Self { stage, model, attempt })
    }
}

/// Point-in-time call counts keyed by [`LedgerKey`].
///
/// Serialized as a JSON object such as `{"paraphrase/llm": 1, "answering/vlm": 5}`.
/// Zero counts are never stored, so two ledgers compare equal exactly when
/// every key has the same count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, u64>", try_from = "BTreeMap<String, u64>")]
pub struct CallLedger {
    counts: BTreeMap<LedgerKey, u64>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: LedgerKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn primary(&self, stage: Stage, model: ModelKind) -> u64 {
        self.get(LedgerKey::primary(stage, model))
    }

    pub fn add(&mut self, key: LedgerKey, count: u64) {
        if count > 0 {
            *self.counts.entry(key).or_insert(0) += count;
        }
    }

    pub fn with(mut self, stage: Stage, model: ModelKind, count: u64) -> Self {
        self.add(LedgerKey::primary(stage, model), count);
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LedgerKey, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    /// Counts for first attempts only; reprompts are dropped.
    pub fn primary_only(&self) -> CallLedger {
        CallLedger {
            counts: self
                .counts
                .iter()
                .filter(|(k, _)| k.attempt == Attempt::Primary)
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }

    pub fn retries(&self) -> u64 {
        self.counts
            .iter()
            .filter(|(k, _)| k.attempt == Attempt::Retry)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn merge(&mut self, other: &CallLedger) {
        for (k, v) in other.iter() {
            self.add(k, v);
        }
    }

    /// The four budget columns in table order: paraphrasing LLM, VLM,
    /// decomposition-column LLM (decomposition plus judging), aggregation LLM.
    /// Primary attempts only.
    pub fn budget_row(&self) -> [u64; 4] {
        let llm = |s| self.primary(s, ModelKind::Llm);
        [
            llm(Stage::Paraphrase),
            Stage::ALL.iter().map(|s| self.primary(*s, ModelKind::Vlm)).sum(),
            llm(Stage::Decomposition) + llm(Stage::Judging),
            llm(Stage::Aggregation),
        ]
    }
}

impl From<CallLedger> for BTreeMap<String, u64> {
    fn from(ledger: CallLedger) -> Self {
        ledger.counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

impl TryFrom<BTreeMap<String, u64>> for CallLedger {
    type Error = String;

    fn try_from(map: BTreeMap<String, u64>) -> Result<Self, Self::Error> {
        let mut ledger = CallLedger::new();
        for (k, v) in map {
            ledger.add(k.parse()?, v);
        }
        Ok(ledger)
    }
}

impl FromIterator<(LedgerKey, u64)> for CallLedger {
    fn from_iter<T: IntoIterator<Item = (LedgerKey, u64)>>(iter: T) -> Self {
        let mut ledger = CallLedger::new();
        for (k, v) in iter {
            ledger.add(k, v);
        }
        ledger
    }
}

/// Shared, concurrently updated counterpart of [`CallLedger`].
#[derive(Debug, Default)]
pub struct LiveLedger {
    counts: Mutex<BTreeMap<LedgerKey, u64>>,
}

impl LiveLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self, key: LedgerKey) {
        let mut counts = self.counts.lock().unwrap_or_else(|p| p.into_inner());
        *counts.entry(key).or_insert(0) += 1;
    }

    pub fn snapshot(&self) -> CallLedger {
        let counts = self.counts.lock().unwrap_or_else(|p| p.into_inner());
        CallLedger { counts: counts.clone() }
    }
}
