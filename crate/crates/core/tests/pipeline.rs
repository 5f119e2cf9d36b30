mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use common::{binary_query, open_query, overlay, synthetic, uniform};
use pda_core::agents::{GENERIC_COUNT_INSTRUCTION, YES_NO_INSTRUCTION};
use pda_core::answers::{CandidateSet, UNCLEAR};
use pda_core::exec::Executor;
use pda_core::model::scripted::ScriptedBackend;
use pda_core::model::{BackendError, BackendHandle, Backends, ChatBackend, LedgerKey, ModelKind, Stage};
use pda_core::pipeline::{
    expected_budget, expected_caption_budget, run_caption_pipeline, run_direct, run_pda_full, run_pda_pv, run_pda_rda,
    run_pda_rjv, run_query, verify_budget, FinalDecision, PipelineError, Query, RecordStatus, Variant, VariantConfig,
};

fn label(record: &pda_core::pipeline::DecisionRecord) -> &str {
    record.final_text().expect("final decision")
}

#[test]
fn every_variant_meets_its_budget_on_structured_queries() {
    let backends = uniform(synthetic(0.7, 11));
    let exec = Executor::default();
    for variant in Variant::ALL {
        for n in [1, 3, 5] {
            for k in [1, 3, 5] {
                let config = VariantConfig::new(variant).with_n(n).with_k(k);
                let record = run_query(&binary_query(&format!("{variant}-{n}-{k}")), &config, &backends, &exec).unwrap();
                assert!(record.is_ok(), "{variant} n={n} k={k}: {:?}", record.status);
                verify_budget(&record).unwrap();
                assert_eq!(record.ledger, expected_budget(variant, n, k));
            }
        }
    }
}

#[test]
fn open_form_variants_meet_their_budgets() {
    let backends = uniform(synthetic(0.7, 12));
    for variant in [Variant::Full, Variant::Rjv, Variant::Rda] {
        let config = VariantConfig::new(variant);
        let record = run_query(&open_query("open"), &config, &backends, &Executor::sequential()).unwrap();
        assert!(record.is_ok());
        verify_budget(&record).unwrap();
        assert_ne!(label(&record), UNCLEAR);
    }
}

#[test]
fn full_budget_examples() {
    assert_eq!(expected_budget(Variant::Full, 5, 3).budget_row(), [1, 15, 20, 1]);
    let backends = uniform(synthetic(0.7, 3));
    let record = run_pda_full(&binary_query("min"), &VariantConfig::new(Variant::Full).with_n(1).with_k(1), &backends, &Executor::default()).unwrap();
    assert_eq!(record.ledger.budget_row(), [1, 1, 2, 1]);
}

#[test]
fn pv_rejects_open_form_queries() {
    let backends = uniform(synthetic(0.7, 1));
    let err = run_pda_pv(&open_query("o"), &VariantConfig::new(Variant::Pv), &backends, &Executor::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
    assert_eq!(backends.victim.ledger_snapshot().total(), 0);
}

#[test]
fn perfect_views_give_the_correct_label_everywhere() {
    let backends = uniform(synthetic(1.0, 5));
    for variant in Variant::ALL {
        let record = run_query(&binary_query("perfect"), &VariantConfig::new(variant), &backends, &Executor::default()).unwrap();
        assert_eq!(label(&record), "correct", "{variant}");
    }
}

#[test]
fn rjv_with_uniform_weights_is_a_plain_majority() {
    // Victim answers alternate by paraphrase: views 1,2,4 say jeans.
    let base = synthetic(0.5, 2);
    let victim = overlay(base.clone(), |req| {
        let text = req.last_user_text();
        let answer = if text.contains("(view 3)") || text.contains("(view 5)") { "t shirt" } else { "jeans" };
        Some(format!("Answer: {answer}\nRationale: visible garment."))
    });
    let backends = Backends::split(BackendHandle::from_arc(base), victim);
    let query = Query::structured("rjv", "img", "Which is prominent?", CandidateSet::new(["jeans", "t shirt"]).unwrap());
    let record = run_pda_rjv(&query, &VariantConfig::new(Variant::Rjv), &backends, &Executor::default()).unwrap();
    assert!(record.per_paraphrase_answers.iter().all(|a| a.weight == 1.0));
    assert_eq!(label(&record), "jeans");
    assert_eq!(record.ledger.budget_row(), [1, 5, 5, 0]);
}

#[test]
fn rda_single_view_ignores_a_verbose_aggregator() {
    let base = synthetic(1.0, 2);
    let agents = overlay(base.clone(), |req| {
        (req.stage == Stage::Aggregation).then(|| "After careful review of every rationale I conclude that it is wrong".into())
    });
    let backends = Backends::split(agents, BackendHandle::from_arc(base));
    let record = run_pda_rda(&binary_query("rda1"), &VariantConfig::new(Variant::Rda).with_n(1), &backends, &Executor::default()).unwrap();
    assert_eq!(label(&record), "correct");
    assert_eq!(record.ledger.budget_row(), [1, 1, 0, 1]);
}

#[test]
fn rda_falls_back_to_majority_on_malformed_aggregation() {
    let base = synthetic(1.0, 2);
    let agents = overlay(base.clone(), |req| (req.stage == Stage::Aggregation).then(|| "".into()));
    let backends = Backends::split(agents, BackendHandle::from_arc(base));
    let record = run_pda_rda(&binary_query("rda5"), &VariantConfig::new(Variant::Rda), &backends, &Executor::default()).unwrap();
    assert_eq!(label(&record), "correct");
    assert!(record.diagnostics.iter().any(|d| d.contains("majority")));
}

#[test]
fn pv_unanimous_second_position_maps_to_the_second_option() {
    let base = synthetic(0.5, 9);
    let agents = overlay(base.clone(), |req| {
        (req.stage == Stage::Paraphrase).then(|| {
            let items: Vec<_> = (1..=5)
                .map(|i| serde_json::json!({"question": format!("Pick one (variant {i}): (A) lower {i}, (B) upper {i}"), "options": [format!("lower {i}"), format!("upper {i}")]}))
                .collect();
            serde_json::json!({ "generated_questions": items }).to_string()
        })
    });
    let victim = BackendHandle::new(ScriptedBackend::new("v", |req| {
        let text = req.last_user_text();
        let i = text.split("(variant ").nth(1).and_then(|s| s.chars().next()).unwrap();
        Ok(format!("Upper {i}."))
    }));
    let backends = Backends::split(agents, victim);
    let query = Query::structured("pv", "img", "Which is prominent?", CandidateSet::new(["jeans", "t shirt"]).unwrap());
    let record = run_pda_pv(&query, &VariantConfig::new(Variant::Pv), &backends, &Executor::default()).unwrap();
    assert_eq!(label(&record), "t shirt");
    assert!(record.per_paraphrase_answers.iter().all(|a| a.label == "t shirt"));
}

#[test]
fn pv_all_unmatched_yields_the_sentinel() {
    let base = synthetic(0.5, 9);
    let victim = BackendHandle::new(ScriptedBackend::new("v", |_| Ok("a purple elephant".into())));
    let backends = Backends::split(BackendHandle::from_arc(base), victim);
    let record = run_pda_pv(&binary_query("pvx"), &VariantConfig::new(Variant::Pv), &backends, &Executor::default()).unwrap();
    assert_eq!(label(&record), UNCLEAR);
    assert!(record.is_ok());
    assert!(!record.diagnostics.is_empty());
}

#[test]
fn extra_victim_call_is_a_named_violation() {
    let base = synthetic(0.7, 4);
    let inner = base.clone();
    let charged = Arc::new(AtomicBool::new(false));
    let victim = BackendHandle::new(ScriptedBackend::with_context("leaky", move |req, ctx| {
        if !charged.swap(true, Ordering::SeqCst) {
            ctx.charge(LedgerKey::primary(Stage::Answering, ModelKind::Vlm));
        }
        inner.complete(req, ctx).map(|r| r.text)
    }));
    let backends = Backends::split(BackendHandle::from_arc(base), victim);
    let record = run_pda_full(&binary_query("leak"), &VariantConfig::new(Variant::Full), &backends, &Executor::default()).unwrap();
    let violation = verify_budget(&record).unwrap_err();
    assert_eq!(violation.mismatches.len(), 1);
    assert_eq!(violation.to_string(), "budget violation for `leak`: (answering/vlm, 15, 16)");
}

#[test]
fn rjv_with_an_aggregation_call_violates_the_table() {
    let backends = uniform(synthetic(0.7, 4));
    let mut record = run_pda_rjv(&binary_query("rjv"), &VariantConfig::new(Variant::Rjv), &backends, &Executor::default()).unwrap();
    record.ledger.add(LedgerKey::primary(Stage::Aggregation, ModelKind::Llm), 1);
    let violation = verify_budget(&record).unwrap_err();
    assert_eq!(violation.mismatches[0].key, LedgerKey::primary(Stage::Aggregation, ModelKind::Llm));
    assert_eq!((violation.mismatches[0].expected, violation.mismatches[0].actual), (0, 1));
}

#[test]
fn retries_are_outside_the_contract() {
    let base = synthetic(0.7, 4);
    let flaky = Arc::new(AtomicBool::new(true));
    let agents = overlay(base.clone(), move |req| {
        (req.stage == Stage::Paraphrase && flaky.swap(false, Ordering::SeqCst)).then(|| "not json".into())
    });
    let backends = Backends::split(agents, BackendHandle::from_arc(base));
    let record = run_pda_rjv(&binary_query("retry"), &VariantConfig::new(Variant::Rjv), &backends, &Executor::default()).unwrap();
    assert_eq!(record.ledger.get(LedgerKey::retry(Stage::Paraphrase, ModelKind::Llm)), 1);
    verify_budget(&record).unwrap();
}

#[test]
fn decomposition_failure_keeps_partial_lineage() {
    let base = synthetic(0.7, 4);
    let agents = overlay(base.clone(), |req| (req.stage == Stage::Decomposition).then(|| "```json\n{\"sub_questions\": [".into()));
    let backends = Backends::split(agents, BackendHandle::from_arc(base.clone()));
    let config = VariantConfig::new(Variant::Full).with_n(2);
    let record = run_pda_full(&binary_query("fail"), &config, &backends, &Executor::default()).unwrap();
    assert!(record.is_failed());
    assert!(record.paraphrases.is_some());
    assert!(record.final_decision.is_none());
    assert_eq!(record.ledger.get(LedgerKey::retry(Stage::Decomposition, ModelKind::Llm)), 2);

    let fallback = VariantConfig { fallback_undefended: true, ..config };
    let record = run_pda_full(&binary_query("fail"), &fallback, &backends, &Executor::default()).unwrap();
    assert!(matches!(record.status, RecordStatus::Fallback { .. }));
    assert!(matches!(record.final_decision, Some(FinalDecision::Label(_))));
}

#[test]
fn scheduling_does_not_change_records() {
    for variant in Variant::ALL {
        let config = VariantConfig::new(variant);
        let run = |exec: Executor| {
            let backends = uniform(synthetic(0.6, 21));
            (0..8).map(|i| run_query(&binary_query(&format!("q{i}")), &config, &backends, &exec).unwrap().without_timing()).collect::<Vec<_>>()
        };
        assert_eq!(run(Executor::sequential()), run(Executor::parallel(Some(4))), "{variant}");
    }
}

#[test]
fn direct_query_is_one_victim_call() {
    let backends = uniform(synthetic(1.0, 4));
    let direct = run_direct(&binary_query("d"), &backends).unwrap();
    assert_eq!(direct.label, "correct");
    assert_eq!(direct.ledger.total(), 1);
}

mod caption {
    use super::*;

    const SHORT: &str = "Two women holding an umbrella on a street.";

    fn yn(q: &str) -> String {
        format!("{q} {YES_NO_INSTRUCTION}")
    }

    /// Agents that parse the caption into two-women claims, ask the same five
    /// questions per view, and propose `edit` when asked to judge.
    fn backends(answer: fn(&str) -> &'static str, edit: &'static str) -> Backends {
        let base = synthetic(0.5, 1);
        let agents = overlay(base.clone(), move |req| {
            let system = req.system_text().unwrap_or("");
            if system.starts_with("You extract atomic visual claims") {
                return Some(r#"{"subject_head":"woman","subject_count":"two","key_object":"umbrella","relation":"holding","scene":"street"}"#.into());
            }
            if system.starts_with("You design verification sub-questions") {
                let qs = [
                    format!("How many main subjects are in the image? {GENERIC_COUNT_INSTRUCTION}"),
                    yn("Does the image show exactly two women as the main subjects?"),
                    yn("Is there an umbrella?"),
                    yn("Is a woman holding the umbrella?"),
                    yn("Is this a street scene?"),
                ];
                return Some(serde_json::json!({ "sub_questions": qs }).to_string());
            }
            if system.starts_with("COCO-style caption judge") {
                return Some(serde_json::json!({ "has_conflict": true, "caption": edit }).to_string());
            }
            None
        });
        let victim = BackendHandle::new(ScriptedBackend::new("v", move |req| {
            let a = answer(req.last_user_text());
            if a.is_empty() {
                Err(BackendError::Refused)
            } else {
                Ok(a.to_owned())
            }
        }));
        Backends::split(agents, victim)
    }

    fn run(b: &Backends) -> pda_core::pipeline::DecisionRecord {
        let query = Query::caption("c", "img", SHORT, "Two women stand under a black umbrella on a wet street.");
        run_caption_pipeline(&query, &VariantConfig::caption(Variant::Full), b, &Executor::default()).unwrap()
    }

    fn verdict(record: &pda_core::pipeline::DecisionRecord) -> (bool, String) {
        match record.final_decision.as_ref().unwrap() {
            FinalDecision::Caption(v) => (v.has_conflict, v.caption.clone()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn supported_caption_is_kept_byte_for_byte() {
        let b = backends(|q| if q.contains("How many") { "two" } else { "yes" }, "Something else entirely.");
        let record = run(&b);
        assert_eq!(verdict(&record), (false, SHORT.to_owned()));
        assert_eq!(record.ledger, expected_caption_budget(2, 5));
    }

    #[test]
    fn count_contradiction_allows_the_count_edit() {
        let b = backends(
            |q| match q {
                q if q.contains("How many") => "one",
                q if q.contains("exactly two") => "no",
                _ => "yes",
            },
            "One woman holding an umbrella on a street.",
        );
        let (conflict, caption) = verdict(&run(&b));
        assert!(conflict);
        assert_eq!(caption, "One woman holding an umbrella on a street.");
    }

    #[test]
    fn refused_evidence_keeps_the_caption() {
        let b = backends(|_| "", "Edited.");
        let record = run(&b);
        assert_eq!(verdict(&record), (false, SHORT.to_owned()));
        assert!(record.evidence.iter().flat_map(|e| &e.pairs).all(|p| p.answer == UNCLEAR));
    }

    #[test]
    fn non_full_variants_reject_captions() {
        let b = backends(|_| "yes", "x");
        let query = Query::caption("c", "img", SHORT, "");
        for variant in [Variant::Rjv, Variant::Rda, Variant::Pv] {
            let config = VariantConfig::caption(variant);
            assert!(run_query(&query, &config, &b, &Executor::default()).is_err(), "{variant}");
        }
    }
}
