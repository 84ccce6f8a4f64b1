//! Pairwise linear ranker for the positional weights of the learnable metric.
//!
//! Every context becomes a feature vector `[u+_1..u+_k, u-_1..u-_k]` with an
//! ordinal target (correct 2, abstain 1, wrong 0). Within each question, every
//! pair with different targets contributes a hinge term
//! `max(0, margin - w·(x_hi - x_lo))`; the objective adds an L2 penalty
//! `c/2·|w|²` to the mean hinge loss. Optimisation is seeded minibatch
//! subgradient descent with step `learning_rate / sqrt(t)`.
//!
//! Learned weights are returned as they are: negative entries are allowed.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ThetaWeights;
use crate::udcg::{sigmoid, split_parts, ContextUtilities};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("no question group contains two examples with different targets")]
    NoPairs,
    #[error("examples have inconsistent feature lengths ({expected} vs {actual})")]
    FeatureLength { expected: usize, actual: usize },
    #[error("feature vectors must have positive even length, got {0}")]
    OddFeatures(usize),
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("theta has k = {theta_k} but examples have k = {example_k}")]
    DimensionMismatch { theta_k: usize, example_k: usize },
}

/// Which utility information enters the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Positive and negative utility parts.
    #[default]
    Full,
    /// Positive parts only; the distraction half is zero.
    RelevanceOnly,
    /// Relevance indicators instead of positive parts; the distraction half is zero.
    Binary,
}

/// Concatenation of the positive and negative parts of `u`.
pub fn build_features(u: &ContextUtilities) -> Vec<f64> {
    let (mut pos, neg) = split_parts(u);
    pos.extend(neg);
    pos
}

/// Feature vector for an ablation mode. `relevant` is only read in
/// [`FeatureMode::Binary`] and must then have the same length as `u`.
pub fn build_features_with(u: &ContextUtilities, relevant: &[bool], mode: FeatureMode) -> Vec<f64> {
    let k = u.k();
    match mode {
        FeatureMode::Full => build_features(u),
        FeatureMode::RelevanceOnly => {
            let mut f = build_features(u);
            f[k..].iter_mut().for_each(|x| *x = 0.0);
            f
        }
        FeatureMode::Binary => {
            assert_eq!(relevant.len(), k, "relevance flags must match context length");
            relevant
                .iter()
                .map(|&r| if r { 1.0 } else { 0.0 })
                .chain(std::iter::repeat_n(0.0, k))
                .collect()
        }
    }
}

/// Linear score `θ·x` of a feature vector laid out as alphas then betas.
pub fn linear_score(theta: &ThetaWeights, features: &[f64]) -> f64 {
    theta
        .alphas
        .iter()
        .chain(&theta.betas)
        .zip(features)
        .map(|(w, x)| w * x)
        .sum()
}

/// Learnable-metric score of a feature vector.
pub fn score_features(theta: &ThetaWeights, features: &[f64]) -> f64 {
    sigmoid(linear_score(theta, features))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub question_id: String,
    pub features: Vec<f64>,
    /// Ordinal outcome: 2 correct, 1 abstain, 0 wrong.
    pub target: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Weight of the L2 penalty.
    pub regularization_c: f64,
    pub max_epochs: usize,
    /// Initial step size; decays as `1/sqrt(t)` over minibatch steps.
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once the relative change of the epoch loss falls below this.
    pub tolerance: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_margin() -> f64 {
    1.0
}

fn default_batch_size() -> usize {
    32
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            regularization_c: 0.01,
            max_epochs: 200,
            learning_rate: 0.1,
            seed: 0,
            tolerance: 1e-6,
            margin: default_margin(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub pairwise_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub theta: ThetaWeights,
    pub log: Vec<EpochLog>,
    /// Number of ordered within-question pairs.
    pub pairs: usize,
}

/// Ordered pair `(hi, lo)` of example indices with `target[hi] > target[lo]`.
type Pair = (usize, usize);

/// All ordered within-question pairs. Groups are visited in order of first
/// appearance so the result only depends on input order.
fn ordered_pairs(examples: &[TrainExample]) -> Vec<Pair> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, ex) in examples.iter().enumerate() {
        groups
            .entry(ex.question_id.as_str())
            .or_insert_with(|| {
                order.push(ex.question_id.as_str());
                Vec::new()
            })
            .push(i);
    }
    let mut pairs = Vec::new();
    for q in order {
        let idx = &groups[q];
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                match examples[i].target.cmp(&examples[j].target) {
                    std::cmp::Ordering::Greater => pairs.push((i, j)),
                    std::cmp::Ordering::Less => pairs.push((j, i)),
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
    }
    pairs
}

fn feature_dim(examples: &[TrainExample]) -> Result<usize, TrainError> {
    let dim = examples.first().map_or(0, |e| e.features.len());
    if dim == 0 || dim % 2 != 0 {
        return Err(TrainError::OddFeatures(dim));
    }
    if let Some(e) = examples.iter().find(|e| e.features.len() != dim) {
        return Err(TrainError::FeatureLength {
            expected: dim,
            actual: e.features.len(),
        });
    }
    Ok(dim)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn pair_margin(w: &[f64], examples: &[TrainExample], (hi, lo): Pair) -> f64 {
    dot(w, &examples[hi].features) - dot(w, &examples[lo].features)
}

fn objective(w: &[f64], examples: &[TrainExample], pairs: &[Pair], cfg: &TrainerConfig) -> f64 {
    let hinge: f64 = pairs
        .iter()
        .map(|&p| (cfg.margin - pair_margin(w, examples, p)).max(0.0))
        .sum::<f64>()
        / pairs.len() as f64;
    0.5 * cfg.regularization_c * dot(w, w) + hinge
}

fn accuracy_on_pairs(w: &[f64], examples: &[TrainExample], pairs: &[Pair]) -> f64 {
    let agree: f64 = pairs
        .iter()
        .map(|&p| {
            let m = pair_margin(w, examples, p);
            if m > 0.0 {
                1.0
            } else if m == 0.0 {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    agree / pairs.len() as f64
}

/// Fits θ on examples grouped by `question_id`. Pairs never cross questions.
///
/// The returned weights are those of the epoch with the lowest objective.
/// Two runs with the same config and input order give bit-identical weights.
pub fn train(examples: &[TrainExample], config: &TrainerConfig) -> Result<TrainedModel, TrainError> {
    let dim = feature_dim(examples)?;
    let pairs = ordered_pairs(examples);
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = vec![0.0; dim];
    let mut best_w = w.clone();
    let mut best_loss = objective(&w, examples, &pairs, config);
    let mut prev_loss = best_loss;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grad = vec![0.0; dim];
    let batch = config.batch_size.max(1);
    let mut step = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            step += 1;
            let eta = config.learning_rate / (step as f64).sqrt();
            grad.iter_mut()
                .zip(&w)
                .for_each(|(g, wi)| *g = config.regularization_c * wi);
            let scale = 1.0 / chunk.len() as f64;
            for &pi in chunk {
                let (hi, lo) = pairs[pi];
                if pair_margin(&w, examples, (hi, lo)) < config.margin {
                    let (xh, xl) = (&examples[hi].features, &examples[lo].features);
                    for d in 0..dim {
                        grad[d] -= scale * (xh[d] - xl[d]);
                    }
                }
            }
            w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= eta * g);
        }
        let loss = objective(&w, examples, &pairs, config);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss(epoch));
        }
        log.push(EpochLog {
            epoch,
            loss,
            pairwise_accuracy: accuracy_on_pairs(&w, examples, &pairs),
        });
        if loss < best_loss {
            best_loss = loss;
            best_w.copy_from_slice(&w);
        }
        let rel = (prev_loss - loss).abs() / prev_loss.abs().max(f64::MIN_POSITIVE);
        if epoch > 1 && rel < config.tolerance {
            break;
        }
        prev_loss = loss;
    }
    Ok(TrainedModel {
        theta: ThetaWeights::from_vector(&best_w),
        log,
        pairs: pairs.len(),
    })
}

/// Fraction of within-question ordered pairs whose θ-scores agree with the
/// target order; score ties count one half.
pub fn pairwise_accuracy(theta: &ThetaWeights, examples: &[TrainExample]) -> Result<f64, TrainError> {
    let dim = feature_dim(examples)?;
    if dim != 2 * theta.k {
        return Err(TrainError::DimensionMismatch {
            theta_k: theta.k,
            example_k: dim / 2,
        });
    }
    let pairs = ordered_pairs(examples);
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    Ok(accuracy_on_pairs(&theta.to_vector(), examples, &pairs))
}
