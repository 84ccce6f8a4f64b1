//! Closed-form stand-in for an LLM answering from a prompt context.
//!
//! The model reads the strongest relevant evidence `c = max a_i·u+_i` and the
//! strongest distraction `d = max a_i·|u-_i|`, where `a` is a positional
//! attention profile. With distraction gain `g`:
//!
//! ```text
//! P(correct) = c · (1 - g·d·(1 - c))
//! P(wrong)   = (1 - P(correct)) · g · d
//! P(abstain) = 1 - P(correct) - P(wrong)
//! ```
//!
//! Distractors erode the chance of extracting evidence that is not already
//! certain, and take over part of the remaining mass as wrong answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::model::Outcome;
use crate::udcg::ContextUtilities;

/// Distraction gain of the default profile.
pub const DEFAULT_DISTRACTION_GAIN: f64 = 0.8;

/// Attention anchors of the default U-shaped profile at five positions; other
/// context sizes interpolate the same curve.
const U_SHAPE: [f64; 5] = [1.0, 0.7, 0.5, 0.7, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Expected,
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLlmProfile {
    pub attention: Vec<f64>,
    pub distraction_gain: f64,
    pub mode: SimMode,
}

impl SimLlmProfile {
    pub fn new(attention: Vec<f64>, distraction_gain: f64, mode: SimMode) -> Result<Self, MetricError> {
        if attention.is_empty() {
            return Err(MetricError::Empty);
        }
        for &a in attention.iter().chain(std::iter::once(&distraction_gain)) {
            if !(0.0..=1.0).contains(&a) {
                return Err(MetricError::ProbabilityOutOfRange(a));
            }
        }
        Ok(SimLlmProfile {
            attention,
            distraction_gain,
            mode,
        })
    }

    /// Lost-in-the-middle profile: full attention at both ends, half in the middle.
    pub fn u_shaped(k: usize) -> Self {
        SimLlmProfile {
            attention: u_shaped_attention(k),
            distraction_gain: DEFAULT_DISTRACTION_GAIN,
            mode: SimMode::Expected,
        }
    }

    pub fn k(&self) -> usize {
        self.attention.len()
    }

    pub fn with_mode(mut self, mode: SimMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Piecewise-linear interpolation of the five-point U-shape at `k` evenly
/// spaced positions. `k = 5` reproduces the anchors exactly.
pub fn u_shaped_attention(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![U_SHAPE[0]];
    }
    let segments = (U_SHAPE.len() - 1) as f64;
    (0..k)
        .map(|i| {
            let x = i as f64 / (k - 1) as f64 * segments;
            let lo = x.floor() as usize;
            let t = x - lo as f64;
            if lo + 1 >= U_SHAPE.len() || t == 0.0 {
                return U_SHAPE[lo.min(U_SHAPE.len() - 1)];
            }
            U_SHAPE[lo] + t * (U_SHAPE[lo + 1] - U_SHAPE[lo])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub correct: f64,
    pub abstain: f64,
    pub wrong: f64,
}

impl OutcomeDistribution {
    /// Draws one outcome with a single uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        let x: f64 = rng.random();
        if x < self.correct {
            Outcome::Correct
        } else if x < self.correct + self.wrong {
            Outcome::Wrong
        } else {
            Outcome::Abstain
        }
    }

    /// Expected ordinal, `2·P(correct) + P(abstain)`.
    pub fn expected_ordinal(&self) -> f64 {
        2.0 * self.correct + self.abstain
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Simulated {
    Distribution(OutcomeDistribution),
    Drawn(Outcome),
}

pub fn outcome_distribution(
    u: &ContextUtilities,
    relevant: &[bool],
    profile: &SimLlmProfile,
) -> Result<OutcomeDistribution, MetricError> {
    let k = u.k();
    if profile.k() != k {
        return Err(MetricError::DimensionMismatch {
            expected: profile.k(),
            actual: k,
        });
    }
    if relevant.len() != k {
        return Err(MetricError::DimensionMismatch {
            expected: k,
            actual: relevant.len(),
        });
    }
    let mut evidence: f64 = 0.0;
    let mut distraction: f64 = 0.0;
    for ((&ui, &rel), &a) in u.values().iter().zip(relevant).zip(&profile.attention) {
        if rel {
            evidence = evidence.max(a * ui.max(0.0));
        } else {
            distraction = distraction.max(a * (-ui).max(0.0));
        }
    }
    let g = profile.distraction_gain;
    let correct = evidence * (1.0 - g * distraction * (1.0 - evidence));
    let wrong = (1.0 - correct) * g * distraction;
    let abstain = 1.0 - (correct + wrong);
    Ok(OutcomeDistribution {
        correct,
        abstain,
        wrong,
    })
}

/// Outcome distribution in expected mode; one seeded draw in sampled mode.
pub fn simulate_outcome(
    u: &ContextUtilities,
    relevant: &[bool],
    profile: &SimLlmProfile,
) -> Result<Simulated, MetricError> {
    let dist = outcome_distribution(u, relevant, profile)?;
    Ok(match profile.mode {
        SimMode::Expected => Simulated::Distribution(dist),
        SimMode::Sampled { seed } => Simulated::Drawn(dist.sample(&mut ChaCha8Rng::seed_from_u64(seed))),
    })
}
