//! Paraphrase–decompose–aggregate defense for vision-language models.
//!
//! The crate is layered bottom-up:
//!
//! - [`model`]: chat backends (HTTP, replay, synthetic) and the per-call ledger
//! - [`prompts`]: versioned prompt assets
//! - [`answers`]: answer normalization, candidate matching and voting
//! - [`agents`]: typed prompt contracts with one-shot reprompting
//! - [`pipeline`]: the four defense variants and their call budgets
//! - [`harness`]: datasets, batch evaluation, metrics and the smoothing study

pub mod agents;
pub mod answers;
pub mod exec;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod prompts;
