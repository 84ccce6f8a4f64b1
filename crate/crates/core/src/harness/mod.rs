//! Correlation protocol between context metrics and answer outcomes.
//!
//! For each question, a set of contexts is scored by a metric and compared to
//! the ideal ordering of the same contexts (correct, then abstain, then
//! wrong) with a tie-corrected Spearman correlation.

pub mod experiments;
pub mod metric;
pub mod simulator;
pub mod spearman;

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::error::MetricError;
use crate::model::{EvalContext, JudgmentIndex, Outcome, RankedList, UtilityIndex};
use crate::trainer::TrainError;
use crate::udcg::ContextUtilities;
use metric::{ContextView, Metric};
use spearman::{has_variation, spearman, SpearmanError};

/// Number of top retrieved passages contexts are drawn from.
pub const SAMPLING_POOL: usize = 25;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Spearman(#[from] SpearmanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("context {0:?} has no outcome")]
    MissingOutcome(String),
    #[error("no annotation for ({question_id}, {passage_id})")]
    MissingAnnotation {
        question_id: String,
        passage_id: String,
    },
    #[error("no relevance judgment for ({question_id}, {passage_id})")]
    MissingJudgment {
        question_id: String,
        passage_id: String,
    },
    #[error("question {question_id:?}: {irrelevant} irrelevant passages cannot fill a context of {k}")]
    InsufficientIrrelevant {
        question_id: String,
        irrelevant: usize,
        k: usize,
    },
    #[error("no scorable question for metric {metric} at k = {k}")]
    NoScorableQuestions { metric: String, k: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Ordinal of an outcome in the ideal context ordering.
pub fn ideal_ordinal(outcome: Outcome) -> f64 {
    f64::from(outcome.ordinal())
}

/// Stable 64-bit FNV-1a hash of a question id.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Per-question generator seed, independent of processing order.
pub fn question_seed(global_seed: u64, question_id: &str) -> u64 {
    global_seed ^ fnv1a(question_id).rotate_left(17)
}

pub fn question_rng(global_seed: u64, question_id: &str, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(question_seed(global_seed, question_id));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledContexts {
    pub contexts: Vec<EvalContext>,
    /// Set when the question has no relevant passage in the pool and every
    /// context is irrelevant-only.
    pub warning: Option<String>,
}

/// Draws `n` contexts of `k` distinct passages from the top
/// [`SAMPLING_POOL`] entries of `ranking`.
///
/// The first `ceil(n/2)` contexts hold at least one relevant passage (one
/// drawn from the relevant pool, the rest from the whole pool), the other
/// `floor(n/2)` only irrelevant ones. Passage order within a context is the
/// random draw order. Deterministic for a given `seed` and question id.
pub fn sample_contexts(
    ranking: &RankedList,
    judgments: &JudgmentIndex,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<SampledContexts, HarnessError> {
    let qid = &ranking.question_id;
    if k == 0 {
        return Err(HarnessError::Config("k must be at least 1".into()));
    }
    let pool: Vec<&str> = ranking
        .entries
        .iter()
        .take(SAMPLING_POOL)
        .map(|e| e.passage_id.as_str())
        .collect();
    let mut relevant = Vec::new();
    let mut irrelevant = Vec::new();
    for &pid in &pool {
        match judgments.get(qid, pid) {
            Some(true) => relevant.push(pid),
            Some(false) => irrelevant.push(pid),
            None => {
                return Err(HarnessError::MissingJudgment {
                    question_id: qid.clone(),
                    passage_id: pid.to_owned(),
                })
            }
        }
    }
    if irrelevant.len() < k {
        return Err(HarnessError::InsufficientIrrelevant {
            question_id: qid.clone(),
            irrelevant: irrelevant.len(),
            k,
        });
    }

    let mut rng = question_rng(seed, qid, 0);
    let (with_relevant, warning) = if relevant.is_empty() {
        let msg = format!("question {qid:?} has no relevant passage in its top {SAMPLING_POOL}; all contexts are irrelevant-only");
        log::warn!("{msg}");
        (0, Some(msg))
    } else {
        (n.div_ceil(2), None)
    };

    let mut contexts = Vec::with_capacity(n);
    for i in 0..n {
        let mut ids: Vec<&str> = if i < with_relevant {
            let anchor = *relevant.choose(&mut rng).expect("relevant pool is non-empty");
            let mut rest: Vec<&str> = pool.iter().copied().filter(|&p| p != anchor).collect();
            let (picked, _) = rest.partial_shuffle(&mut rng, k - 1);
            let mut ids = picked.to_vec();
            ids.push(anchor);
            ids
        } else {
            let mut pool = irrelevant.clone();
            let (picked, _) = pool.partial_shuffle(&mut rng, k);
            picked.to_vec()
        };
        ids.shuffle(&mut rng);
        contexts.push(EvalContext {
            question_id: qid.clone(),
            context_id: format!("{qid}/c{i}"),
            passage_ids: ids.into_iter().map(str::to_owned).collect(),
            outcome: None,
        });
    }
    Ok(SampledContexts { contexts, warning })
}

/// One context ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredContext {
    pub context_id: String,
    pub view: ContextView,
    pub outcome: Option<Outcome>,
}

/// All contexts of one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionContexts {
    pub question_id: String,
    pub contexts: Vec<ScoredContext>,
}

/// Relevance flags and utilities of the passages of one context.
pub fn context_view(
    ctx: &EvalContext,
    utilities: &UtilityIndex,
    judgments: &JudgmentIndex,
) -> Result<ContextView, HarnessError> {
    let qid = &ctx.question_id;
    let mut rel = Vec::with_capacity(ctx.k());
    let mut util = Vec::with_capacity(ctx.k());
    for pid in &ctx.passage_ids {
        rel.push(*judgments.get(qid, pid).ok_or_else(|| HarnessError::MissingJudgment {
            question_id: qid.clone(),
            passage_id: pid.clone(),
        })?);
        util.push(*utilities.get(qid, pid).ok_or_else(|| HarnessError::MissingAnnotation {
            question_id: qid.clone(),
            passage_id: pid.clone(),
        })?);
    }
    Ok(ContextView::new(rel, ContextUtilities::new(util)?)?)
}

/// Groups contexts by question (sorted by question id), attaching relevance
/// and utilities. With `require_outcome`, every context must carry an outcome.
pub fn assemble(
    contexts: &[EvalContext],
    utilities: &UtilityIndex,
    judgments: &JudgmentIndex,
    require_outcome: bool,
) -> Result<Vec<QuestionContexts>, HarnessError> {
    let mut groups: BTreeMap<&str, Vec<ScoredContext>> = BTreeMap::new();
    for ctx in contexts {
        if require_outcome && ctx.outcome.is_none() {
            return Err(HarnessError::MissingOutcome(ctx.context_id.clone()));
        }
        groups
            .entry(ctx.question_id.as_str())
            .or_default()
            .push(ScoredContext {
                context_id: ctx.context_id.clone(),
                view: context_view(ctx, utilities, judgments)?,
                outcome: ctx.outcome,
            });
    }
    Ok(groups
        .into_iter()
        .map(|(q, contexts)| QuestionContexts {
            question_id: q.to_owned(),
            contexts,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionCorrelation {
    pub question_id: String,
    /// `None` when the metric or the outcomes are constant over the question.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub per_question: Vec<QuestionCorrelation>,
    /// Mean over scored questions; `None` if every question was skipped.
    pub mean_rho: Option<f64>,
    pub scored: usize,
    pub skipped: usize,
}

/// Correlates an arbitrary context scorer with the ideal outcome ordering.
pub fn correlate_scores<F>(
    name: &str,
    scorer: F,
    questions: &[QuestionContexts],
) -> Result<CorrelationReport, HarnessError>
where
    F: Fn(&ContextView) -> Result<f64, MetricError> + Sync,
{
    let per_question = questions
        .par_iter()
        .map(|q| {
            let mut scores = Vec::with_capacity(q.contexts.len());
            let mut ideal = Vec::with_capacity(q.contexts.len());
            for c in &q.contexts {
                let outcome = c
                    .outcome
                    .ok_or_else(|| HarnessError::MissingOutcome(c.context_id.clone()))?;
                scores.push(scorer(&c.view)?);
                ideal.push(ideal_ordinal(outcome));
            }
            let rho = if has_variation(&scores) && has_variation(&ideal) {
                Some(spearman(&scores, &ideal)?)
            } else {
                None
            };
            Ok(QuestionCorrelation {
                question_id: q.question_id.clone(),
                rho,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let rhos: Vec<f64> = per_question.iter().filter_map(|q| q.rho).collect();
    let scored = rhos.len();
    Ok(CorrelationReport {
        metric: name.to_owned(),
        skipped: per_question.len() - scored,
        mean_rho: (scored > 0).then(|| rhos.iter().sum::<f64>() / scored as f64),
        scored,
        per_question,
    })
}

pub fn correlate_metric(
    metric: &Metric,
    questions: &[QuestionContexts],
) -> Result<CorrelationReport, HarnessError> {
    correlate_scores(&metric.name(), |v| metric.score(v), questions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RankedEntry;

    fn pool(rel: usize, irr: usize) -> (RankedList, JudgmentIndex) {
        let mut j = JudgmentIndex::new();
        let mut entries = Vec::new();
        for i in 0..rel + irr {
            let pid = format!("p{i:02}");
            j.insert("q", &pid, i < rel);
            entries.push(RankedEntry {
                passage_id: pid,
                score: 100.0 - i as f64,
            });
        }
        (
            RankedList {
                question_id: "q".into(),
                entries,
            },
            j,
        )
    }

    #[test]
    fn balanced_split() {
        let (r, j) = pool(5, 20);
        let s = sample_contexts(&r, &j, 10, 5, 7).unwrap();
        assert_eq!(s.contexts.len(), 10);
        assert!(s.warning.is_none());
        let with_rel = s
            .contexts
            .iter()
            .filter(|c| c.passage_ids.iter().any(|p| j.get("q", p) == Some(&true)))
            .count();
        assert_eq!(with_rel, 5);
        for c in &s.contexts {
            assert_eq!(c.k(), 5);
            let mut ids = c.passage_ids.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 5);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (r, j) = pool(5, 20);
        assert_eq!(
            sample_contexts(&r, &j, 10, 5, 7).unwrap(),
            sample_contexts(&r, &j, 10, 5, 7).unwrap()
        );
        assert_ne!(
            sample_contexts(&r, &j, 10, 5, 7).unwrap(),
            sample_contexts(&r, &j, 10, 5, 8).unwrap()
        );
    }

    #[test]
    fn odd_n_rounds_relevant_half_up() {
        let (r, j) = pool(3, 10);
        let s = sample_contexts(&r, &j, 5, 3, 1).unwrap();
        let with_rel = s
            .contexts
            .iter()
            .filter(|c| c.passage_ids.iter().any(|p| j.get("q", p) == Some(&true)))
            .count();
        assert_eq!(with_rel, 3);
    }

    #[test]
    fn too_few_irrelevant_is_an_error() {
        let (r, j) = pool(0, 4);
        assert!(matches!(
            sample_contexts(&r, &j, 10, 5, 7),
            Err(HarnessError::InsufficientIrrelevant { irrelevant: 4, k: 5, .. })
        ));
    }

    #[test]
    fn no_relevant_gives_warning() {
        let (r, j) = pool(0, 25);
        let s = sample_contexts(&r, &j, 10, 5, 7).unwrap();
        assert!(s.warning.is_some());
        assert!(s
            .contexts
            .iter()
            .all(|c| c.passage_ids.iter().all(|p| j.get("q", p) == Some(&false))));
    }

    #[test]
    fn only_top_pool_is_used() {
        let (mut r, mut j) = pool(2, 23);
        r.entries.push(RankedEntry {
            passage_id: "late".into(),
            score: -1.0,
        });
        j.insert("q", "late", true);
        let s = sample_contexts(&r, &j, 10, 5, 3).unwrap();
        assert!(s.contexts.iter().all(|c| !c.passage_ids.iter().any(|p| p == "late")));
    }

    fn question(outcomes: &[Outcome], utils: &[f64]) -> QuestionContexts {
        QuestionContexts {
            question_id: "q".into(),
            contexts: outcomes
                .iter()
                .zip(utils)
                .enumerate()
                .map(|(i, (o, u))| ScoredContext {
                    context_id: format!("c{i}"),
                    view: ContextView::new(vec![*u > 0.0], ContextUtilities::new(vec![*u]).unwrap()).unwrap(),
                    outcome: Some(*o),
                })
                .collect(),
        }
    }

    #[test]
    fn self_correlation_and_reversal() {
        use Outcome::*;
        let q = vec![question(&[Correct, Wrong, Abstain, Correct], &[0.9, -0.8, 0.0, 0.5])];
        let ideal = |v: &ContextView| -> Result<f64, MetricError> {
            let u = v.utilities.values()[0];
            Ok(if u > 0.0 { 2.0 } else if u == 0.0 { 1.0 } else { 0.0 })
        };
        let r = correlate_scores("ideal", ideal, &q).unwrap();
        assert_eq!(r.mean_rho, Some(1.0));
        let r = correlate_scores("neg", |v| ideal(v).map(|x| -x), &q).unwrap();
        assert_eq!(r.mean_rho, Some(-1.0));
    }

    #[test]
    fn constant_outcomes_are_skipped() {
        use Outcome::*;
        let q = vec![
            question(&[Abstain; 3], &[0.1, 0.2, 0.3]),
            question(&[Correct, Wrong, Wrong], &[0.9, -0.1, -0.5]),
        ];
        let r = correlate_metric(&Metric::udcg(), &q).unwrap();
        assert_eq!((r.scored, r.skipped), (1, 1));
        assert_eq!(r.per_question[0].rho, None);
        assert!(r.mean_rho.unwrap() > 0.8);
    }

    #[test]
    fn missing_outcome_is_an_error() {
        let mut q = question(&[Outcome::Correct, Outcome::Wrong], &[0.5, -0.5]);
        q.contexts[1].outcome = None;
        assert!(matches!(
            correlate_metric(&Metric::Precision, &[q]),
            Err(HarnessError::MissingOutcome(_))
        ));
    }

    #[test]
    fn question_seed_depends_on_id() {
        assert_ne!(question_seed(1, "a"), question_seed(1, "b"));
        assert_eq!(question_seed(1, "a"), question_seed(1, "a"));
    }
}
