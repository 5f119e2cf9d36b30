mod common;

use std::io::Cursor;

use common::{synthetic, uniform};
use pda_core::exec::Executor;
use pda_core::harness::{
    ablate_k, binomial_majority_oracle, evaluate, load_run, parse_dataset, persist_run, simulate_pv, synthetic_items,
    PersistError, RunInfo, RunMetrics, Schema, ScoringMode,
};
use pda_core::pipeline::{PipelineError, Variant, VariantConfig};

#[test]
fn perfect_and_hopeless_views() {
    let items = synthetic_items(20, true);
    for variant in Variant::ALL {
        let eval = evaluate(&items, &VariantConfig::new(variant), &uniform(synthetic(1.0, 1)), &Executor::default(), ScoringMode::Exact).unwrap();
        assert_eq!(eval.metrics.accuracy, Some(1.0), "{variant}");
        assert!(eval.violations.is_empty());
        assert_eq!(eval.metrics.agreement_rate, Some(1.0));
    }
    let eval = evaluate(&items, &VariantConfig::new(Variant::Pv), &uniform(synthetic(0.0, 1)), &Executor::default(), ScoringMode::Exact).unwrap();
    assert_eq!(eval.metrics.accuracy, Some(0.0));
}

#[test]
fn counts_are_conserved() {
    let eval = evaluate(&synthetic_items(30, true), &VariantConfig::new(Variant::Rda), &uniform(synthetic(0.6, 2)), &Executor::default(), ScoringMode::Exact).unwrap();
    let m = &eval.metrics;
    assert_eq!(m.n_scored + m.failure_count + m.n_unscored, m.n_items);
    assert_eq!(m.mean_calls_per_item["answering/vlm"], 5.0);
    assert_eq!(RunMetrics::from_records(&eval.records), eval.metrics);
}

#[test]
fn unsupported_items_abort_before_any_call() {
    let text = r#"{"id":"o1","image":"a.jpg","question":"What is it?","answers":["cat"]}"#;
    let items = parse_dataset(Cursor::new(text), Schema::Vqa).unwrap();
    let backends = uniform(synthetic(0.7, 1));
    let err = evaluate(&items, &VariantConfig::new(Variant::Pv), &backends, &Executor::default(), ScoringMode::Exact).unwrap_err();
    assert!(matches!(err, PipelineError::Config(ref m) if m.contains("o1")));
    assert_eq!(backends.victim.ledger_snapshot().total(), 0);
}

#[test]
fn runs_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let eval = evaluate(&synthetic_items(6, false), &VariantConfig::new(Variant::Full), &uniform(synthetic(0.7, 3)), &Executor::default(), ScoringMode::Exact).unwrap();
    let info = RunInfo { config: serde_json::json!({"variant": "full"}), backend_ids: vec!["synthetic".into()] };
    let manifest = persist_run(dir.path(), &eval, &info).unwrap();
    let (loaded, records) = load_run(dir.path()).unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(records, eval.records);
    assert_eq!(RunMetrics::from_records(&records), loaded.metrics);
    assert_eq!(loaded.config_hash.len(), 64);
}

#[test]
fn empty_runs_persist() {
    let dir = tempfile::tempdir().unwrap();
    let eval = evaluate(&[], &VariantConfig::new(Variant::Pv), &uniform(synthetic(0.7, 3)), &Executor::default(), ScoringMode::Exact).unwrap();
    persist_run(dir.path(), &eval, &RunInfo::default()).unwrap();
    let (manifest, records) = load_run(dir.path()).unwrap();
    assert!(records.is_empty());
    assert_eq!(manifest.metrics.n_items, 0);
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_run(dir.path()), Err(PersistError::MissingManifest(_))));
}

#[test]
fn evaluation_is_deterministic_given_a_seed() {
    let run = || {
        let eval = evaluate(&synthetic_items(10, true), &VariantConfig::new(Variant::Full), &uniform(synthetic(0.6, 8)), &Executor::default(), ScoringMode::Exact).unwrap();
        (eval.metrics, eval.records.into_iter().map(|r| r.record.without_timing()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn small_smoothing_study_tracks_the_oracle() {
    let row = simulate_pv(0.7, 5, 2000, 42, &Executor::default()).unwrap();
    assert_eq!(row.oracle, binomial_majority_oracle(0.7, 5).unwrap());
    assert!(row.delta < 4.0 * row.std_error.max(0.01), "{row:?}");
}

#[test]
fn ablation_records_bad_cells_and_continues() {
    let items = synthetic_items(4, true);
    let grid = [VariantConfig::new(Variant::Full).with_k(1), VariantConfig::new(Variant::Full).with_k(9), VariantConfig::new(Variant::Full).with_k(3)];
    let cells = ablate_k(&items, &grid, &uniform(synthetic(1.0, 1)), &Executor::default(), ScoringMode::Exact);
    assert_eq!(cells.len(), 3);
    assert_eq!(cells[0].accuracy, Some(1.0));
    assert!(cells[1].error.is_some());
    assert_eq!(cells[2].accuracy, Some(1.0));
}
