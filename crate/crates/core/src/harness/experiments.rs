//! Desk-scale experiments driven by the simulated LLM.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metric::{ContextView, Metric};
use super::simulator::{outcome_distribution, SimLlmProfile};
use super::spearman::spearman;
use super::{
    assemble, correlate_metric, question_rng, sample_contexts, HarnessError, QuestionContexts,
    ScoredContext,
};
use crate::model::{
    EvalContext, JudgmentIndex, Outcome, Passage, Question, RankedEntry, RankedList,
    RelevanceJudgment, ThetaWeights, UtilityAnnotation, UtilityIndex,
};
use crate::trainer::{build_features_with, train, FeatureMode, TrainExample, TrainerConfig};
use crate::udcg::ContextUtilities;

fn view(relevant: Vec<bool>, utilities: Vec<f64>) -> Result<ContextView, HarnessError> {
    Ok(ContextView::new(relevant, ContextUtilities::new(utilities)?)?)
}

/// Training examples from scored contexts with outcomes.
pub fn training_examples(
    questions: &[QuestionContexts],
    mode: FeatureMode,
) -> Result<Vec<TrainExample>, HarnessError> {
    let mut out = Vec::new();
    for q in questions {
        for c in &q.contexts {
            let outcome = c
                .outcome
                .ok_or_else(|| HarnessError::MissingOutcome(c.context_id.clone()))?;
            out.push(TrainExample {
                question_id: q.question_id.clone(),
                features: build_features_with(&c.view.utilities, &c.view.relevant, mode),
                target: outcome.ordinal(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionRow {
    pub position: usize,
    pub accuracy: f64,
    pub ndcg: f64,
    pub map: f64,
    pub mrr: f64,
    pub precision: f64,
    pub udcg: f64,
    pub udcg_theta: Option<f64>,
}

/// One relevant passage moved across positions `1..=k` among irrelevant
/// passages of a fixed utility. Accuracy is the simulated expected accuracy.
pub fn position_sweep(
    k: usize,
    relevant_utility: f64,
    distractor_utility: f64,
    profile: &SimLlmProfile,
    theta: Option<&ThetaWeights>,
) -> Result<Vec<PositionRow>, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Config(format!("position sweep needs k >= 2, got {k}")));
    }
    let theta_metric = theta.map(|t| Metric::udcg_theta(t.clone()));
    (0..k)
        .map(|p| {
            let relevant: Vec<bool> = (0..k).map(|i| i == p).collect();
            let u: Vec<f64> = (0..k)
                .map(|i| if i == p { relevant_utility } else { distractor_utility })
                .collect();
            let v = view(relevant, u)?;
            let dist = outcome_distribution(&v.utilities, &v.relevant, profile)?;
            Ok(PositionRow {
                position: p + 1,
                accuracy: dist.correct,
                ndcg: Metric::Ndcg.score(&v)?,
                map: Metric::Map.score(&v)?,
                mrr: Metric::Mrr.score(&v)?,
                precision: Metric::Precision.score(&v)?,
                udcg: Metric::udcg().score(&v)?,
                udcg_theta: theta_metric.as_ref().map(|m| m.score(&v)).transpose()?,
            })
        })
        .collect()
}

/// Contexts with one relevant passage at a random position among random
/// distractors, plus all-distractor contexts, with sampled simulator outcomes.
pub fn sweep_like_questions(
    k: usize,
    profile: &SimLlmProfile,
    questions: usize,
    contexts_per_question: usize,
    seed: u64,
) -> Result<Vec<QuestionContexts>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(questions);
    for q in 0..questions {
        let mut contexts = Vec::with_capacity(contexts_per_question);
        for c in 0..contexts_per_question {
            let pos = (c % 2 == 0).then(|| rng.random_range(0..k));
            let relevant: Vec<bool> = (0..k).map(|i| Some(i) == pos).collect();
            let u: Vec<f64> = relevant
                .iter()
                .map(|&r| {
                    if r {
                        rng.random_range(0.3..=1.0)
                    } else {
                        -rng.random_range(0.0..=1.0)
                    }
                })
                .collect();
            let v = view(relevant, u)?;
            let outcome = outcome_distribution(&v.utilities, &v.relevant, profile)?.sample(&mut rng);
            contexts.push(ScoredContext {
                context_id: format!("s{q}/c{c}"),
                view: v,
                outcome: Some(outcome),
            });
        }
        out.push(QuestionContexts {
            question_id: format!("s{q:04}"),
            contexts,
        });
    }
    Ok(out)
}

/// Trains θ on [`sweep_like_questions`].
pub fn train_on_sweep_like(
    k: usize,
    profile: &SimLlmProfile,
    seed: u64,
) -> Result<ThetaWeights, HarnessError> {
    let qs = sweep_like_questions(k, profile, 300, 10, seed)?;
    let examples = training_examples(&qs, FeatureMode::Full)?;
    let config = TrainerConfig {
        seed,
        ..TrainerConfig::default()
    };
    Ok(train(&examples, &config)?.theta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub case: String,
    pub distractor_utility: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub udcg: f64,
}

/// One relevant passage at position 1 followed by `k - 1` weak or hard
/// distractors.
pub fn distractor_gap(
    profile: &SimLlmProfile,
    relevant_utility: f64,
    weak_utility: f64,
    hard_utility: f64,
) -> Result<Vec<GapRow>, HarnessError> {
    let k = profile.k();
    [("weak", weak_utility), ("hard", hard_utility)]
        .into_iter()
        .map(|(case, du)| {
            let relevant: Vec<bool> = (0..k).map(|i| i == 0).collect();
            let u: Vec<f64> = (0..k).map(|i| if i == 0 { relevant_utility } else { du }).collect();
            let v = view(relevant, u)?;
            Ok(GapRow {
                case: case.into(),
                distractor_utility: du,
                accuracy: outcome_distribution(&v.utilities, &v.relevant, profile)?.correct,
                precision: Metric::Precision.score(&v)?,
                udcg: Metric::udcg().score(&v)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub questions: usize,
    pub pool: usize,
    /// Fraction of questions without any relevant passage in the pool.
    pub no_relevant_rate: f64,
    pub max_relevant: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            questions: 300,
            pool: super::SAMPLING_POOL,
            no_relevant_rate: 0.13,
            max_relevant: 5,
            seed: 0,
        }
    }
}

/// A complete synthetic dataset: every record the toolkit reads.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub questions: Vec<Question>,
    pub passages: Vec<Passage>,
    pub judgments: Vec<RelevanceJudgment>,
    pub annotations: Vec<UtilityAnnotation>,
    pub rankings: Vec<RankedList>,
}

impl SyntheticSuite {
    pub fn judgment_index(&self) -> JudgmentIndex {
        JudgmentIndex::from_judgments(&self.judgments)
    }

    pub fn utility_index(&self) -> UtilityIndex {
        UtilityIndex::from_annotations(&self.annotations)
    }
}

/// Magnitude of an irrelevant passage's utility: mostly weak distractors,
/// some intermediate, a few hard ones.
fn distractor_magnitude<R: Rng>(rng: &mut R) -> f64 {
    let x: f64 = rng.random();
    if x < 0.6 {
        rng.random_range(0.0..0.2)
    } else if x < 0.85 {
        rng.random_range(0.2..=0.8)
    } else {
        rng.random_range(0.8..=1.0)
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn synthetic_suite(config: &SuiteConfig) -> SyntheticSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut suite = SyntheticSuite {
        questions: Vec::new(),
        passages: Vec::new(),
        judgments: Vec::new(),
        annotations: Vec::new(),
        rankings: Vec::new(),
    };
    for q in 0..config.questions {
        let qid = format!("q{q:04}");
        suite.questions.push(Question {
            id: qid.clone(),
            text: format!("synthetic question {q}"),
            reference_answers: vec![format!("answer {q}")],
        });
        let n_rel = if rng.random::<f64>() < config.no_relevant_rate {
            0
        } else {
            rng.random_range(1..=config.max_relevant.max(1))
        };
        let mut flags: Vec<bool> = (0..config.pool).map(|i| i < n_rel).collect();
        flags.shuffle(&mut rng);
        let mut entries = Vec::with_capacity(config.pool);
        for (i, &rel) in flags.iter().enumerate() {
            let pid = format!("{qid}-p{i:02}");
            let magnitude = round6(if rel {
                rng.random_range(0.05..=1.0)
            } else {
                distractor_magnitude(&mut rng)
            });
            suite.passages.push(Passage {
                id: pid.clone(),
                text: format!("synthetic passage {i} for question {q}"),
            });
            suite.judgments.push(RelevanceJudgment {
                question_id: qid.clone(),
                passage_id: pid.clone(),
                relevant: rel,
            });
            suite.annotations.push(UtilityAnnotation {
                question_id: qid.clone(),
                passage_id: pid.clone(),
                p_no_response: round6(1.0 - magnitude),
                utility: if rel { magnitude } else { -magnitude },
                estimator: None,
            });
            entries.push(RankedEntry {
                passage_id: pid,
                score: (config.pool - i) as f64,
            });
        }
        suite.rankings.push(RankedList {
            question_id: qid,
            entries,
        });
    }
    suite
}

/// Samples `n` contexts of size `k` per question and draws one simulated
/// outcome for each. Deterministic for a fixed seed, independent of
/// question order.
pub fn simulate_contexts(
    suite: &SyntheticSuite,
    k: usize,
    n: usize,
    profile: &SimLlmProfile,
    seed: u64,
) -> Result<Vec<EvalContext>, HarnessError> {
    if profile.k() != k {
        return Err(HarnessError::Config(format!(
            "profile has {} positions but k = {k}",
            profile.k()
        )));
    }
    let judgments = suite.judgment_index();
    let utilities = suite.utility_index();
    let per_question = suite
        .rankings
        .par_iter()
        .map(|ranking| {
            let sampled = sample_contexts(ranking, &judgments, n, k, seed)?;
            let mut rng = question_rng(seed, &ranking.question_id, 1);
            sampled
                .contexts
                .into_iter()
                .map(|mut ctx| {
                    let v = super::context_view(&ctx, &utilities, &judgments)?;
                    let dist = outcome_distribution(&v.utilities, &v.relevant, profile)?;
                    ctx.outcome = Some(dist.sample(&mut rng));
                    Ok(ctx)
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(per_question.into_iter().flatten().collect())
}

/// Scored contexts of the synthetic suite at one `k` under the default profile.
pub fn suite_questions(
    suite: &SyntheticSuite,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<QuestionContexts>, HarnessError> {
    let contexts = simulate_contexts(suite, k, n, &SimLlmProfile::u_shaped(k), seed)?;
    assemble(&contexts, &suite.utility_index(), &suite.judgment_index(), true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepRow {
    pub k: usize,
    pub metric: String,
    pub mean_rho: f64,
    pub scored: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepTable {
    pub rows: Vec<KSweepRow>,
    /// Population standard deviation of mean ρ across k, per metric.
    pub std_dev: Vec<(String, f64)>,
}

impl KSweepTable {
    pub fn std_of(&self, metric: &str) -> Option<f64> {
        self.std_dev.iter().find(|(m, _)| m == metric).map(|(_, s)| *s)
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean ρ per metric for every `k`, using `generate(k)` for the contexts.
pub fn k_sweep<G>(k_values: &[usize], generate: G, metrics: &[Metric]) -> Result<KSweepTable, HarnessError>
where
    G: Fn(usize) -> Result<Vec<QuestionContexts>, HarnessError>,
{
    if metrics.is_empty() || k_values.is_empty() {
        return Err(HarnessError::Config("k sweep needs at least one k and one metric".into()));
    }
    let mut rows = Vec::new();
    for &k in k_values {
        let questions = generate(k)?;
        for m in metrics {
            let r = correlate_metric(m, &questions)?;
            let mean_rho = r.mean_rho.ok_or_else(|| HarnessError::NoScorableQuestions {
                metric: m.name(),
                k,
            })?;
            rows.push(KSweepRow {
                k,
                metric: r.metric,
                mean_rho,
                scored: r.scored,
                skipped: r.skipped,
            });
        }
    }
    let std_dev = metrics
        .iter()
        .map(|m| {
            let name = m.name();
            let values: Vec<f64> = rows.iter().filter(|r| r.metric == name).map(|r| r.mean_rho).collect();
            (name, population_std(&values))
        })
        .collect();
    Ok(KSweepTable { rows, std_dev })
}

/// Positional weights used to generate data with a known ideal ranking:
/// U-shaped relevance weights and distraction weights loaded on the ends.
pub fn planted_theta() -> ThetaWeights {
    ThetaWeights {
        k: 5,
        alphas: vec![1.0, 0.6, 0.3, 0.6, 1.0],
        betas: vec![0.8, 0.5, 0.3, 0.5, 0.8],
    }
}

/// Score thresholds of the planted model: above the first is correct, below
/// the second is wrong, abstain in between.
pub const PLANTED_THRESHOLDS: (f64, f64) = (0.25, -0.5);

/// Questions whose outcomes are a deterministic threshold of `θ*·x`.
pub fn planted_questions(
    theta: &ThetaWeights,
    questions: usize,
    contexts_per_question: usize,
    seed: u64,
) -> Result<Vec<QuestionContexts>, HarnessError> {
    let k = theta.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hi, lo) = PLANTED_THRESHOLDS;
    let mut out = Vec::with_capacity(questions);
    for q in 0..questions {
        let contexts = (0..contexts_per_question)
            .map(|c| {
                let relevant: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < 0.3).collect();
                let u: Vec<f64> = relevant
                    .iter()
                    .map(|&r| {
                        let m = rng.random_range(0.0..=1.0);
                        if r {
                            m
                        } else {
                            -m
                        }
                    })
                    .collect();
                let v = view(relevant, u)?;
                let s = crate::udcg::udcg_theta_linear(&v.utilities, theta)?;
                let outcome = if s > hi {
                    Outcome::Correct
                } else if s < lo {
                    Outcome::Wrong
                } else {
                    Outcome::Abstain
                };
                Ok(ScoredContext {
                    context_id: format!("t{q}/c{c}"),
                    view: v,
                    outcome: Some(outcome),
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        out.push(QuestionContexts {
            question_id: format!("t{q:04}"),
            contexts,
        });
    }
    Ok(out)
}

/// Trains one θ per feature mode and returns the matching metrics, plus the
/// training-free variant without the distraction term.
pub fn ablation_metrics(
    train_set: &[QuestionContexts],
    config: &TrainerConfig,
) -> Result<Vec<Metric>, HarnessError> {
    let mut metrics = vec![Metric::udcg(), Metric::Udcg { gamma: 0.0 }];
    for mode in [FeatureMode::Full, FeatureMode::RelevanceOnly, FeatureMode::Binary] {
        let theta = train(&training_examples(train_set, mode)?, config)?.theta;
        metrics.push(Metric::UdcgTheta { theta, mode });
    }
    Ok(metrics)
}

/// Spearman correlation of two columns of a position sweep.
pub fn sweep_correlation(rows: &[PositionRow], column: impl Fn(&PositionRow) -> f64) -> Result<f64, HarnessError> {
    let x: Vec<f64> = rows.iter().map(&column).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    Ok(spearman(&x, &acc)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_shape() {
        let rows = position_sweep(5, 0.9, -0.5, &SimLlmProfile::u_shaped(5), None).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.precision == 0.2));
        assert!(rows.windows(2).all(|w| w[0].ndcg > w[1].ndcg));
        assert!(rows[4].accuracy > rows[2].accuracy);
        assert!(rows.iter().all(|r| r.udcg_theta.is_none()));
    }

    #[test]
    fn sweep_needs_two_positions() {
        assert!(position_sweep(1, 0.9, -0.5, &SimLlmProfile::u_shaped(1), None).is_err());
    }

    #[test]
    fn gap_rows() {
        let rows = distractor_gap(&SimLlmProfile::u_shaped(5), 0.9, -0.1, -0.9).unwrap();
        assert_eq!(rows[0].precision, rows[1].precision);
        assert!(rows[0].accuracy > rows[1].accuracy);
        assert!(rows[0].udcg > rows[1].udcg);
    }

    #[test]
    fn suite_is_consistent() {
        let suite = synthetic_suite(&SuiteConfig {
            questions: 20,
            ..SuiteConfig::default()
        });
        assert_eq!(suite.rankings.len(), 20);
        assert_eq!(suite.annotations.len(), 500);
        for a in &suite.annotations {
            assert!((a.utility.abs() - (1.0 - a.p_no_response)).abs() < 1e-12);
        }
        let a = simulate_contexts(&suite, 5, 10, &SimLlmProfile::u_shaped(5), 3).unwrap();
        let b = simulate_contexts(&suite, 5, 10, &SimLlmProfile::u_shaped(5), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert!(a.iter().all(|c| c.outcome.is_some()));
    }

    #[test]
    fn planted_classes_are_balanced() {
        let qs = planted_questions(&planted_theta(), 50, 10, 1).unwrap();
        let mut counts = [0usize; 3];
        for c in qs.iter().flat_map(|q| &q.contexts) {
            counts[c.outcome.unwrap().ordinal() as usize] += 1;
        }
        assert!(counts.iter().all(|&n| n > 50), "{counts:?}");
    }

    #[test]
    fn k_sweep_is_deterministic() {
        let suite = synthetic_suite(&SuiteConfig {
            questions: 30,
            ..SuiteConfig::default()
        });
        let gen = |k| suite_questions(&suite, k, 10, 5);
        let metrics = [Metric::Ndcg, Metric::udcg()];
        let a = k_sweep(&[1, 3], gen, &metrics).unwrap();
        let b = k_sweep(&[1, 3], gen, &metrics).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert!(a.std_of("udcg").is_some());
    }
}
