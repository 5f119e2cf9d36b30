use serde::{Deserialize, Serialize};

use super::vlm::{ask, atomic_prompt, rationale_prompt, short_answer_prompt, split_rationale, with_item_options, with_options};
use super::{drive, DecisionRecord, FinalDecision, ParaphraseAnswer, Paraphrases, PipelineError, Query, TaskKind, Variant, VariantConfig};
use crate::agents::{
    aggregate_global, aggregate_structured, decompose_vqa, judge_paraphrase, paraphrase_logical, paraphrase_semantic,
    AgentError, AtomicQuestionSet, RationaleTuple,
};
use crate::answers::{
    evidence_scores, map_pv_option, map_to_candidates, normalize_answer, weighted_scores, CandidateSet, EvidencePair,
    EvidenceSet, VoteTally, UNCLEAR,
};
use crate::exec::Executor;
use crate::model::{Backends, CallLedger, Session, Stage};

const SHORT_TOKENS: u32 = 32;
const RATIONALE_TOKENS: u32 = 160;

fn require(config: &VariantConfig, variant: Variant, query: &Query) -> Result<(), PipelineError> {
    if config.variant != variant {
        return Err(PipelineError::Config(format!("expected a {variant} config, got {}", config.variant)));
    }
    config.check_task(query.kind())
}

/// Maps an answer into the structured candidate set, or normalizes it for
/// open-form tasks. Unmatched structured answers become the sentinel.
fn to_label(answer: &str, candidates: Option<&CandidateSet>) -> String {
    match candidates {
        Some(c) => map_to_candidates(answer, c).map_or_else(|| UNCLEAR.to_owned(), str::to_owned),
        None => normalize_answer(answer),
    }
}

/// Tally over `votes` against the task's candidates (or the observed answers
/// for open-form tasks).
fn tally<'a>(votes: impl IntoIterator<Item = (&'a str, f64)> + Clone, candidates: Option<&CandidateSet>) -> Option<VoteTally> {
    match candidates {
        Some(c) => Some(weighted_scores(votes, c)),
        None => {
            let observed = CandidateSet::from_observed(votes.clone().into_iter().map(|(v, _)| v))?;
            Some(weighted_scores(votes, &observed))
        }
    }
}

fn winner(t: Option<&VoteTally>) -> String {
    t.map_or_else(|| UNCLEAR.to_owned(), VoteTally::winner)
}

struct FullBranch {
    questions: AtomicQuestionSet,
    evidence: EvidenceSet,
    label: String,
}

/// Decompose, answer, and reduce one paraphrase to a label.
fn full_branch(
    session: &Session<'_>,
    query: &Query,
    k: usize,
    index: usize,
    paraphrase: &str,
) -> Result<FullBranch, AgentError> {
    let candidates = query.candidates();
    let mut questions = decompose_vqa(session, paraphrase, index, k)?;
    questions.questions.truncate(k);
    let mut evidence = EvidenceSet::new(index);
    for q in &questions.questions {
        let raw = ask(session, &query.image_ref, atomic_prompt(q), SHORT_TOKENS)?;
        evidence.push(q.text.clone(), raw);
    }
    // One reduction call per atomic answer: what does this fact alone say
    // about the paraphrased question? Unclear readings are dropped below.
    let probe_question = with_options(paraphrase, candidates);
    let mut probes = Vec::with_capacity(evidence.pairs.len());
    for pair in &evidence.pairs {
        let reading = aggregate_structured(session, Stage::Decomposition, &probe_question, std::slice::from_ref(pair))?;
        probes.push(to_label(&reading, candidates));
    }
    let label = winner(tally(probes.iter().map(|p| (p.as_str(), 1.0)), candidates).as_ref());
    Ok(FullBranch { questions, evidence, label })
}

/// Paraphrase, decompose, answer, aggregate.
///
/// Each paraphrase is decomposed into K atomic questions, each answered by
/// the victim and reduced to a label with one LLM call; the paraphrase's label
/// is the majority of those readings. For structured tasks the final answer is
/// the argmax of the paraphrase-level evidence scores, and the aggregation
/// call only breaks ties among leaders. For open-form tasks the aggregation
/// call writes the final answer.
pub fn run_pda_full(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    require(config, Variant::Full, query)?;
    if query.kind() == TaskKind::Caption {
        return super::run_caption_pipeline(query, config, backends, exec);
    }
    let candidates = query.candidates();
    Ok(drive(query, config, backends, |session, record| {
        let set = record.time("paraphrase", |_| paraphrase_semantic(session, &query.text, config.n_paraphrases, config.change_intensity))?;
        let views = set.candidates.clone();
        record.paraphrases = Some(Paraphrases::Semantic(set));

        let branches = record.time("evidence", |_| {
            exec.map(&views, |i, view| full_branch(session, query, config.k_atomic, i, view))
        });
        let mut first_error = None;
        for branch in branches {
            match branch {
                Ok(b) => {
                    record.per_paraphrase_answers.push(ParaphraseAnswer {
                        index: b.evidence.paraphrase_index,
                        label: b.label,
                        weight: 1.0,
                    });
                    record.decompositions.push(b.questions);
                    record.evidence.push(b.evidence);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }

        record.time("aggregation", |record| {
            let labels: Vec<&str> = record.per_paraphrase_answers.iter().map(|a| a.label.as_str()).collect();
            let scores = tally(labels.iter().map(|l| (*l, 1.0)), candidates);
            let summary: Vec<EvidencePair> =
                views.iter().zip(&labels).map(|(view, label)| EvidencePair::new(view.clone(), *label)).collect();
            let aggregated = aggregate_structured(session, Stage::Aggregation, &with_options(&query.text, candidates), &summary)?;
            let leaders: Vec<String> = scores.as_ref().map(|t| t.leaders().into_iter().map(str::to_owned).collect()).unwrap_or_default();
            let final_label = match candidates {
                Some(c) => {
                    let mapped = map_to_candidates(&aggregated, c);
                    match leaders.as_slice() {
                        [] => mapped.map_or_else(|| UNCLEAR.to_owned(), str::to_owned),
                        [only] => only.clone(),
                        tied => {
                            let pick = mapped.filter(|m| tied.iter().any(|t| t == m));
                            record.diagnostics.push(format!("tie among {tied:?}; aggregator said {aggregated:?}"));
                            pick.map_or_else(|| tied[0].clone(), str::to_owned)
                        }
                    }
                }
                None if aggregated != UNCLEAR => aggregated,
                None => winner(scores.as_ref()),
            };
            record.tally = scores;
            record.final_decision = Some(FinalDecision::Label(final_label));
            Ok(())
        })
    }))
}

/// Reason–judge–vote: one rationale answer per paraphrase, one judge call per
/// answer, weighted vote in code.
pub fn run_pda_rjv(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    require(config, Variant::Rjv, query)?;
    let candidates = query.candidates();
    Ok(drive(query, config, backends, |session, record| {
        let set = record.time("paraphrase", |_| paraphrase_semantic(session, &query.text, config.n_paraphrases, config.change_intensity))?;
        let views = set.candidates.clone();
        record.paraphrases = Some(Paraphrases::Semantic(set));

        let judged = record.time("evidence", |_| {
            exec.map(&views, |i, view| -> Result<_, AgentError> {
                let prompt = rationale_prompt(&with_options(view, candidates));
                let raw = ask(session, &query.image_ref, prompt, RATIONALE_TOKENS)?;
                let (answer, rationale) = split_rationale(&raw);
                let mut evidence = EvidenceSet::new(i);
                evidence.push(view.clone(), raw);
                let judged = judge_paraphrase(session, i, view, &answer, &rationale)?;
                Ok((evidence, judged))
            })
        });
        let mut answers = Vec::new();
        for result in judged {
            let (evidence, j) = result?;
            record.evidence.push(evidence);
            answers.push(ParaphraseAnswer { index: j.paraphrase_index, label: to_label(&j.label, candidates), weight: j.weight });
            if j.fallback {
                record.diagnostics.push(format!("judge fallback on paraphrase {}", j.paraphrase_index));
            }
        }
        record.time("aggregation", |record| {
            let scores = tally(answers.iter().map(|a| (a.label.as_str(), a.weight)), candidates);
            record.final_decision = Some(FinalDecision::Label(winner(scores.as_ref())));
            record.tally = scores;
            record.per_paraphrase_answers = answers;
        });
        Ok(())
    }))
}

/// Reason–diagnose–aggregate: one rationale answer per paraphrase, then a
/// single global aggregation call.
pub fn run_pda_rda(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    require(config, Variant::Rda, query)?;
    let candidates = query.candidates();
    Ok(drive(query, config, backends, |session, record| {
        let set = record.time("paraphrase", |_| paraphrase_semantic(session, &query.text, config.n_paraphrases, config.change_intensity))?;
        let views = set.candidates.clone();
        record.paraphrases = Some(Paraphrases::Semantic(set));

        let replies = record.time("evidence", |_| {
            exec.map(&views, |_, view| ask(session, &query.image_ref, rationale_prompt(&with_options(view, candidates)), RATIONALE_TOKENS))
        });
        let mut tuples = Vec::new();
        for (i, (view, reply)) in views.iter().zip(replies).enumerate() {
            let raw = reply?;
            let (answer, rationale) = split_rationale(&raw);
            let mut evidence = EvidenceSet::new(i);
            evidence.push(view.clone(), raw);
            record.evidence.push(evidence);
            record.per_paraphrase_answers.push(ParaphraseAnswer { index: i, label: to_label(&answer, candidates), weight: 1.0 });
            tuples.push(RationaleTuple { paraphrase: view.clone(), answer, rationale });
        }
        record.time("aggregation", |record| {
            let global = aggregate_global(session, &with_options(&query.text, candidates), &tuples, candidates)?;
            if global.fallback {
                record.diagnostics.push("aggregator reply unusable; used majority vote".into());
            }
            record.tally = tally(record.per_paraphrase_answers.iter().map(|a| (a.label.as_str(), 1.0)), candidates);
            record.final_decision = Some(FinalDecision::Label(global.label));
            Ok(())
        })
    }))
}

/// Paraphrase–vote: logically equivalent option rewordings, one plain answer
/// each, mapped back by position and majority-voted.
pub fn run_pda_pv(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    require(config, Variant::Pv, query)?;
    let candidates = query.candidates().expect("checked: pv requires candidates");
    Ok(drive(query, config, backends, |session, record| {
        let set = record.time("paraphrase", |_| paraphrase_logical(session, &query.text, candidates, config.n_paraphrases))?;
        let items = set.items.clone();
        let original = set.original_options.clone();
        record.paraphrases = Some(Paraphrases::Logical(set));

        let replies = record.time("evidence", |_| {
            exec.map(&items, |_, item| {
                ask(session, &query.image_ref, short_answer_prompt(&with_item_options(&item.question, &item.options)), SHORT_TOKENS)
            })
        });
        for (i, (item, reply)) in items.iter().zip(replies).enumerate() {
            let raw = reply?;
            let label = map_pv_option(&raw, &item.options, &original).unwrap_or_else(|| UNCLEAR.to_owned());
            let mut evidence = EvidenceSet::new(i);
            evidence.push(item.question.clone(), raw);
            record.evidence.push(evidence);
            record.per_paraphrase_answers.push(ParaphraseAnswer { index: i, label, weight: 1.0 });
        }
        record.time("aggregation", |record| {
            let labels: Vec<&str> = record.per_paraphrase_answers.iter().map(|a| a.label.as_str()).collect();
            let scores = evidence_scores(&labels, candidates);
            if scores.leaders().is_empty() {
                record.diagnostics.push("no answer mapped to an option".into());
            }
            record.final_decision = Some(FinalDecision::Label(scores.winner()));
            record.tally = Some(scores);
        });
        Ok(())
    }))
}

/// The undefended baseline: one plain victim call on the original query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectAnswer {
    pub query_id: String,
    pub raw: String,
    pub label: String,
    pub ledger: CallLedger,
}

pub fn run_direct(query: &Query, backends: &Backends) -> Result<DirectAnswer, AgentError> {
    let session = Session::for_query(backends, &query.id, query.adversarial);
    let (raw, label) = direct_label(&session, query)?;
    Ok(DirectAnswer { query_id: query.id.clone(), raw, label, ledger: session.ledger() })
}

pub(super) fn direct_label(session: &Session<'_>, query: &Query) -> Result<(String, String), AgentError> {
    let candidates = query.candidates();
    let raw = ask(session, &query.image_ref, short_answer_prompt(&with_options(&query.text, candidates)), SHORT_TOKENS)?;
    let label = to_label(&raw, candidates);
    Ok((raw, label))
}
