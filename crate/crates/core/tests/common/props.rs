//! Voting and normalization properties, runnable from any test target.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestError, TestRunner};

use pda_core::answers::{
    evidence_scores, majority_vote, map_pv_option, normalize_answer, weighted_vote, CandidateSet, UNCLEAR,
};

pub const CASES: u32 = 1000;

const LABELS: &[&str] = &["red", "blue", "green", "cat", "dog", "t shirt", "jeans", "two", "bus", "kite"];

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

/// A candidate set of 2..=5 distinct labels.
fn candidates() -> impl Strategy<Value = CandidateSet> {
    proptest::sample::subsequence(LABELS.to_vec(), 2..=5).prop_shuffle().prop_map(|l| CandidateSet::new(l).unwrap())
}

/// Raw model answers: labels with casing, articles and punctuation noise,
/// plus junk that maps nowhere.
fn noisy_answer() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => (proptest::sample::select(LABELS), any::<bool>(), any::<bool>(), proptest::sample::select(&["", ".", "!", " "][..]))
            .prop_map(|(l, upper, article, tail)| {
                let l = if upper { l.to_uppercase() } else { l.to_owned() };
                format!("{}{l}{tail}", if article { "The " } else { "" })
            }),
        1 => Just(UNCLEAR.to_owned()),
        1 => "[a-z ]{0,12}",
    ]
}

fn votes() -> impl Strategy<Value = (CandidateSet, Vec<String>)> {
    (candidates(), proptest::collection::vec(noisy_answer(), 0..12))
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| match e {
        TestError::Fail(reason, value) => format!("{reason} for {value:?}"),
        TestError::Abort(reason) => format!("aborted: {reason}"),
    })
}

pub fn normalize_is_idempotent() -> Result<(), String> {
    check(prop_oneof![noisy_answer(), any::<String>(), "\\PC{0,30}"], |s| {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
        Ok(())
    })
}

pub fn majority_is_permutation_invariant() -> Result<(), String> {
    check(votes().prop_flat_map(|(c, v)| (Just(c), Just(v.clone()), Just(v).prop_shuffle())), |(c, v, shuffled)| {
        prop_assert_eq!(majority_vote(&v, &c), majority_vote(&shuffled, &c));
        Ok(())
    })
}

pub fn uniform_weights_reduce_to_majority() -> Result<(), String> {
    check((votes(), 0.01f64..100.0), |((c, v), w)| {
        let weighted = weighted_vote(v.iter().map(|a| (a.as_str(), w)), &c);
        prop_assert_eq!(weighted, majority_vote(&v, &c));
        Ok(())
    })
}

/// Every vote is counted once: on a candidate or as excluded.
pub fn evidence_is_conserved() -> Result<(), String> {
    check(votes(), |(c, v)| {
        let tally = evidence_scores(&v, &c);
        let counted: u32 = tally.votes.values().sum();
        prop_assert_eq!(counted + tally.excluded, v.len() as u32);
        prop_assert_eq!(tally.scores.values().sum::<f64>(), counted as f64);
        prop_assert_eq!(tally.total_weight, counted as f64);
        prop_assert!(tally.scores.keys().eq(c.labels().iter()));
        Ok(())
    })
}

/// Item option `j` maps back to original option `j` and to nothing else.
pub fn pv_back_map_is_a_bijection() -> Result<(), String> {
    let words = proptest::collection::hash_set("[b-z]{4,9}", 2..=5);
    let strategy = (words, candidates()).prop_filter_map("arity", |(items, originals)| {
        let items: Vec<String> = items.into_iter().collect();
        let originals: Vec<String> = originals.labels().iter().take(items.len()).cloned().collect();
        (originals.len() == items.len()).then_some((items, originals))
    });
    check(strategy, |(items, originals)| {
        let mapped: Vec<_> = items.iter().map(|i| map_pv_option(i, &items, &originals)).collect();
        let expected: Vec<_> = originals.iter().map(|o| Some(normalize_answer(o))).collect();
        prop_assert_eq!(mapped, expected);
        Ok(())
    })
}

pub type Check = fn() -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("normalize idempotence", normalize_is_idempotent),
    ("majority permutation invariance", majority_is_permutation_invariant),
    ("uniform-weight reduction", uniform_weights_reduce_to_majority),
    ("E(y) conservation", evidence_is_conserved),
    ("PV back-map bijection", pv_back_map_is_a_bijection),
];
