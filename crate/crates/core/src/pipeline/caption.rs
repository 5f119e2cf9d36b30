use super::vlm::ask;
use super::{drive, DecisionRecord, FinalDecision, Paraphrases, PipelineError, Query, Task, TaskKind, Variant, VariantConfig};
use crate::agents::{caption_judge, decompose_caption_verify, extract_caption_claims, paraphrase_semantic, AgentError};
use crate::answers::{EvidencePair, EvidenceSet};
use crate::exec::Executor;
use crate::model::Backends;

const CAPTION_ANSWER_TOKENS: u32 = 24;

/// Caption verification: paraphrase the short caption into N views, extract
/// its claims once, write K verification questions per view, answer them with
/// the victim, and let the gated judge decide whether to edit.
pub fn run_caption_pipeline(
    query: &Query,
    config: &VariantConfig,
    backends: &Backends,
    exec: &Executor,
) -> Result<DecisionRecord, PipelineError> {
    let Task::OpenForm { short_caption: Some(short), detailed_caption } = &query.task else {
        return Err(PipelineError::Config(format!("query `{}` has no short caption", query.id)));
    };
    if config.variant != Variant::Full {
        config.check_task(TaskKind::Caption)?;
    }
    config.validate()?;
    let detailed = detailed_caption.as_deref().unwrap_or("");
    Ok(drive(query, config, backends, |session, record| {
        let set = record.time("paraphrase", |_| paraphrase_semantic(session, short, config.n_paraphrases, config.change_intensity))?;
        let views = set.candidates.clone();
        record.paraphrases = Some(Paraphrases::Semantic(set));

        let claims = record.time("claims", |_| extract_caption_claims(session, short))?;
        record.claims = Some(claims.clone());

        let branches = record.time("evidence", |_| {
            exec.map(&views, |i, view| -> Result<_, AgentError> {
                let mut questions = decompose_caption_verify(session, &claims, detailed, view, i, config.k_atomic)?;
                questions.questions.truncate(config.k_atomic);
                let mut evidence = EvidenceSet::new(i);
                for q in &questions.questions {
                    // Verification questions carry their own answer format.
                    let raw = ask(session, &query.image_ref, q.text.clone(), CAPTION_ANSWER_TOKENS)?;
                    evidence.push(q.text.clone(), raw);
                }
                Ok((questions, evidence))
            })
        });
        let mut first_error = None;
        for branch in branches {
            match branch {
                Ok((questions, evidence)) => {
                    record.decompositions.push(questions);
                    record.evidence.push(evidence);
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
            let pairs: Vec<EvidencePair> = record.evidence.iter().flat_map(|e| e.pairs.iter().cloned()).collect();
            let judgement = caption_judge(session, short, &claims, &pairs)?;
            record.diagnostics.push(format!("gate: {}", judgement.gate.reason));
            if !judgement.agreed {
                let llm = judgement.llm.as_ref().map(|v| v.has_conflict.to_string()).unwrap_or_else(|| "malformed".into());
                record.diagnostics.push(format!("judge has_conflict={llm} overridden by gate={}", judgement.gate.has_conflict));
            }
            record.final_decision = Some(FinalDecision::Caption(judgement.verdict));
            Ok(())
        })
    }))
}
