//! Passage utility annotation.
//!
//! A passage's utility for a question is the probability that the LLM does
//! not abstain when prompted with that passage alone, signed by relevance:
//! positive for relevant passages, negative (the distracting effect) for
//! irrelevant ones.

pub mod provider;
pub mod rerank;

use std::collections::HashMap;
use std::fmt;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::MetricError;
use crate::model::{Passage, Question, RelevanceJudgment, UtilityAnnotation};
use provider::{render_prompt, AbstentionProvider, AbstentionRequest, ProviderError, UTILITY_PROMPT};

pub use rerank::{oracle_rerank, RerankError, RerankMode};

/// Distracting effect below which an irrelevant passage is a weak distractor.
pub const WEAK_DISTRACTOR_MAX: f64 = 0.2;
/// Distracting effect above which an irrelevant passage is a hard distractor.
pub const HARD_DISTRACTOR_MIN: f64 = 0.8;

fn check_probability(p: f64) -> Result<(), MetricError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(MetricError::ProbabilityOutOfRange(p))
    }
}

/// Probability that the LLM answers anyway: `1 - p_no_response`.
pub fn distracting_effect(p_no_response: f64) -> Result<f64, MetricError> {
    check_probability(p_no_response)?;
    Ok(1.0 - p_no_response)
}

/// `+(1 - p_no_response)` for relevant passages, `-(1 - p_no_response)` otherwise.
pub fn utility(relevant: bool, p_no_response: f64) -> Result<f64, MetricError> {
    let de = distracting_effect(p_no_response)?;
    Ok(if relevant { de } else { -de })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistractorClass {
    Weak,
    Intermediate,
    Hard,
}

impl DistractorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DistractorClass::Weak => "weak",
            DistractorClass::Intermediate => "intermediate",
            DistractorClass::Hard => "hard",
        }
    }
}

impl fmt::Display for DistractorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Buckets an irrelevant passage by the magnitude of its (non-positive) utility.
pub fn classify_distractor(u: f64) -> Result<DistractorClass, MetricError> {
    if u > 0.0 {
        return Err(MetricError::NotADistractor(u));
    }
    if u < -1.0 || !u.is_finite() {
        return Err(MetricError::UtilityOutOfRange(u));
    }
    let de = -u;
    Ok(if de < WEAK_DISTRACTOR_MAX {
        DistractorClass::Weak
    } else if de > HARD_DISTRACTOR_MIN {
        DistractorClass::Hard
    } else {
        DistractorClass::Intermediate
    })
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("judgment references unknown question {0:?}")]
    MissingQuestion(String),
    #[error("judgment references unknown passage {0:?}")]
    MissingPassage(String),
    #[error("provider failed for ({question_id}, {passage_id}) after {attempts} attempt(s): {source}")]
    Provider {
        question_id: String,
        passage_id: String,
        attempts: usize,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned p_no_response = {value} for ({question_id}, {passage_id})")]
    InvalidProbability {
        question_id: String,
        passage_id: String,
        value: f64,
    },
}

impl AnnotateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AnnotateError::Provider { source, .. } if source.retryable)
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    pub template: String,
    /// Maximum provider requests in flight.
    pub concurrency: usize,
    /// Attempts per pair for retryable provider failures.
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles on every further attempt.
    pub backoff: Duration,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            template: UTILITY_PROMPT.to_owned(),
            concurrency: 1,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Annotates every judged pair with one provider query each.
///
/// Output order follows `judgments`, whatever order the concurrent queries
/// complete in.
pub fn annotate<P: AbstentionProvider + ?Sized>(
    questions: &[Question],
    passages: &[Passage],
    judgments: &[RelevanceJudgment],
    provider: &P,
    options: &AnnotateOptions,
) -> Result<Vec<UtilityAnnotation>, AnnotateError> {
    let qmap: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let pmap: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let jobs = judgments
        .iter()
        .map(|j| {
            let q = *qmap
                .get(j.question_id.as_str())
                .ok_or_else(|| AnnotateError::MissingQuestion(j.question_id.clone()))?;
            let p = *pmap
                .get(j.passage_id.as_str())
                .ok_or_else(|| AnnotateError::MissingPassage(j.passage_id.clone()))?;
            Ok((j, q, p))
        })
        .collect::<Result<Vec<_>, AnnotateError>>()?;

    let run = |(j, q, p): &(&RelevanceJudgment, &Question, &Passage)| {
        annotate_pair(j, q, p, provider, options)
    };
    if options.concurrency <= 1 {
        return jobs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency)
        .build()
        .expect("failed to build annotation thread pool");
    pool.install(|| jobs.par_iter().map(run).collect())
}

fn annotate_pair<P: AbstentionProvider + ?Sized>(
    judgment: &RelevanceJudgment,
    question: &Question,
    passage: &Passage,
    provider: &P,
    options: &AnnotateOptions,
) -> Result<UtilityAnnotation, AnnotateError> {
    let prompt = render_prompt(&options.template, &question.text, &passage.text);
    let request = AbstentionRequest {
        question,
        passage,
        prompt: &prompt,
    };
    let attempts = options.max_attempts.max(1);
    let mut delay = options.backoff;
    let mut attempt = 1;
    let estimate = loop {
        match provider.estimate(&request) {
            Ok(e) => break e,
            Err(e) if e.retryable && attempt < attempts => {
                log::warn!(
                    "retrying ({}, {}) after attempt {attempt}: {e}",
                    question.id,
                    passage.id
                );
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            Err(source) => {
                return Err(AnnotateError::Provider {
                    question_id: question.id.clone(),
                    passage_id: passage.id.clone(),
                    attempts: attempt,
                    source,
                })
            }
        }
    };
    let p = estimate.p_no_response;
    let u = utility(judgment.relevant, p).map_err(|_| AnnotateError::InvalidProbability {
        question_id: question.id.clone(),
        passage_id: passage.id.clone(),
        value: p,
    })?;
    Ok(UtilityAnnotation {
        question_id: question.id.clone(),
        passage_id: passage.id.clone(),
        p_no_response: p,
        utility: u,
        estimator: Some(estimate.estimator),
    })
}

/// Per-class counts of an annotation set: relevant passages and the three
/// distractor strengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotationSummary {
    pub relevant: usize,
    pub weak: usize,
    pub intermediate: usize,
    pub hard: usize,
}

impl AnnotationSummary {
    pub fn total(&self) -> usize {
        self.relevant + self.weak + self.intermediate + self.hard
    }
}

pub fn summarize(
    annotations: &[UtilityAnnotation],
    judgments: &crate::model::JudgmentIndex,
) -> AnnotationSummary {
    let mut s = AnnotationSummary::default();
    for a in annotations {
        let relevant = judgments
            .get(&a.question_id, &a.passage_id)
            .copied()
            .unwrap_or(a.utility > 0.0);
        if relevant {
            s.relevant += 1;
            continue;
        }
        match classify_distractor(a.utility) {
            Ok(DistractorClass::Weak) => s.weak += 1,
            Ok(DistractorClass::Intermediate) => s.intermediate += 1,
            Ok(DistractorClass::Hard) => s.hard += 1,
            Err(_) => s.intermediate += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::provider::{AbstentionEstimate, ConstantProvider};
    use super::*;
    use crate::model::Estimator;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn distracting_effect_examples() {
        assert_eq!(distracting_effect(1.0).unwrap(), 0.0);
        assert_eq!(distracting_effect(0.0).unwrap(), 1.0);
        assert_eq!(distracting_effect(0.8).unwrap(), 1.0 - 0.8);
        assert_eq!(distracting_effect(1.2), Err(MetricError::ProbabilityOutOfRange(1.2)));
        assert!(distracting_effect(f64::NAN).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(true, 0.0).unwrap(), 1.0);
        assert_eq!(utility(false, 0.2).unwrap(), -0.8);
        assert_eq!(utility(true, 1.0).unwrap(), 0.0);
        assert_eq!(utility(false, 1.0).unwrap(), 0.0);
        assert!(utility(true, -0.1).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_distractor(-0.1).unwrap(), DistractorClass::Weak);
        assert_eq!(classify_distractor(-0.9).unwrap(), DistractorClass::Hard);
        assert_eq!(classify_distractor(-0.5).unwrap(), DistractorClass::Intermediate);
        assert_eq!(classify_distractor(-0.2).unwrap(), DistractorClass::Intermediate);
        assert_eq!(classify_distractor(-0.8).unwrap(), DistractorClass::Intermediate);
        assert_eq!(classify_distractor(0.0).unwrap(), DistractorClass::Weak);
        assert_eq!(classify_distractor(0.3), Err(MetricError::NotADistractor(0.3)));
    }

    fn fixture() -> (Vec<Question>, Vec<Passage>, Vec<RelevanceJudgment>) {
        let questions = vec![Question {
            id: "q1".into(),
            text: "Who wrote it?".into(),
            reference_answers: vec!["Someone".into()],
        }];
        let passages = ["a", "b", "c"]
            .iter()
            .map(|id| Passage {
                id: (*id).into(),
                text: format!("text of {id}"),
            })
            .collect();
        let judgments = [("a", true), ("b", false), ("c", true)]
            .iter()
            .map(|(p, r)| RelevanceJudgment {
                question_id: "q1".into(),
                passage_id: (*p).into(),
                relevant: *r,
            })
            .collect();
        (questions, passages, judgments)
    }

    #[test]
    fn annotate_with_constant_provider() {
        let (q, p, j) = fixture();
        let out = annotate(&q, &p, &j, &ConstantProvider(0.5), &AnnotateOptions::default()).unwrap();
        let us: Vec<f64> = out.iter().map(|a| a.utility).collect();
        assert_eq!(us, vec![0.5, -0.5, 0.5]);
        let ids: Vec<&str> = out.iter().map(|a| a.passage_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn annotate_empty_judgments() {
        let (q, p, _) = fixture();
        let out = annotate(&q, &p, &[], &ConstantProvider(0.5), &AnnotateOptions::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn annotate_rejects_out_of_range_probability() {
        let (q, p, j) = fixture();
        let err = annotate(&q, &p, &j, &ConstantProvider(1.1), &AnnotateOptions::default()).unwrap_err();
        match err {
            AnnotateError::InvalidProbability { question_id, passage_id, value } => {
                assert_eq!((question_id.as_str(), passage_id.as_str(), value), ("q1", "a", 1.1));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn annotate_reports_missing_passage() {
        let (q, mut p, j) = fixture();
        p.pop();
        let err = annotate(&q, &p, &j, &ConstantProvider(0.5), &AnnotateOptions::default()).unwrap_err();
        assert!(matches!(err, AnnotateError::MissingPassage(ref id) if id == "c"));
    }

    /// Fails the first `failures` calls with a transient error, then answers
    /// with a value derived from the passage id.
    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl AbstentionProvider for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }

        fn estimate(&self, r: &AbstentionRequest<'_>) -> Result<AbstentionEstimate, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(ProviderError::transient("busy"));
            }
            let p = match r.passage.id.as_str() {
                "a" => 0.1,
                "b" => 0.3,
                _ => 0.9,
            };
            Ok(AbstentionEstimate { p_no_response: p, estimator: Estimator::Logprobs })
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let (q, p, j) = fixture();
        let provider = Flaky { failures: 2, calls: AtomicUsize::new(0) };
        let opts = AnnotateOptions { backoff: Duration::ZERO, ..Default::default() };
        let out = annotate(&q, &p, &j, &provider, &opts).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn exhausted_retries_surface_pair_id() {
        let (q, p, j) = fixture();
        let provider = Flaky { failures: 10, calls: AtomicUsize::new(0) };
        let opts = AnnotateOptions { backoff: Duration::ZERO, max_attempts: 2, ..Default::default() };
        let err = annotate(&q, &p, &j, &provider, &opts).unwrap_err();
        assert!(err.is_retryable());
        assert!(err.to_string().contains("(q1, a)"), "{err}");
    }

    #[test]
    fn concurrent_annotation_preserves_order() {
        let (q, p, j) = fixture();
        let provider = Flaky { failures: 0, calls: AtomicUsize::new(0) };
        let opts = AnnotateOptions { concurrency: 3, ..Default::default() };
        let par = annotate(&q, &p, &j, &provider, &opts).unwrap();
        let seq = annotate(&q, &p, &j, &provider, &AnnotateOptions::default()).unwrap();
        assert_eq!(par, seq);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 6);
    }

    #[test]
    fn summary_counts_classes() {
        let (_, _, j) = fixture();
        let idx = crate::model::JudgmentIndex::from_judgments(&j);
        let anns = vec![
            UtilityAnnotation { question_id: "q1".into(), passage_id: "a".into(), p_no_response: 0.5, utility: 0.5, estimator: None },
            UtilityAnnotation { question_id: "q1".into(), passage_id: "b".into(), p_no_response: 0.05, utility: -0.95, estimator: None },
        ];
        let s = summarize(&anns, &idx);
        assert_eq!(s, AnnotationSummary { relevant: 1, weak: 0, intermediate: 0, hard: 1 });
    }
}
