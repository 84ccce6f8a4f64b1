//! Utility and distraction-aware cumulative gain.
//!
//! Both variants score a prompt context from the signed utilities of its
//! passages, split into a positive (relevance) and a negative (distraction)
//! part and squashed through a logistic function:
//!
//! * [`udcg`] averages the two parts with a single balance factor `gamma`;
//! * [`udcg_theta`] weights every position separately with learned weights.

use crate::error::MetricError;
use crate::model::ThetaWeights;

/// Balance between relevance and distraction that works across models and datasets.
pub const DEFAULT_GAMMA: f64 = 1.0 / 3.0;

/// Signed passage utilities of one context, in prompt order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextUtilities(Vec<f64>);

impl ContextUtilities {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(&v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(if v.is_finite() {
                MetricError::UtilityOutOfRange(v)
            } else {
                MetricError::NonFinite(v)
            });
        }
        Ok(ContextUtilities(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

/// Positive and negative parts of each utility; `pos[i] + neg[i] == u[i]`.
pub fn split_parts(u: &ContextUtilities) -> (Vec<f64>, Vec<f64>) {
    u.values().iter().map(|&x| (x.max(0.0), x.min(0.0))).unzip()
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear score inside the training-free metric, before the sigmoid.
pub fn udcg_linear(u: &ContextUtilities, gamma: f64) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(MetricError::GammaOutOfRange(gamma));
    }
    let k = u.k() as f64;
    let (pos, neg) = split_parts(u);
    let pos_sum: f64 = pos.iter().sum();
    let neg_sum: f64 = neg.iter().sum();
    Ok(pos_sum / k + gamma * neg_sum / k)
}

/// Training-free metric: mean positive utility plus `gamma` times mean negative
/// utility, through a sigmoid.
pub fn udcg(u: &ContextUtilities, gamma: f64) -> Result<f64, MetricError> {
    udcg_linear(u, gamma).map(sigmoid)
}

/// Linear score inside the learnable metric, before the sigmoid.
pub fn udcg_theta_linear(u: &ContextUtilities, theta: &ThetaWeights) -> Result<f64, MetricError> {
    if theta.k != u.k() || theta.alphas.len() != u.k() || theta.betas.len() != u.k() {
        return Err(MetricError::DimensionMismatch {
            expected: theta.k,
            actual: u.k(),
        });
    }
    let (pos, neg) = split_parts(u);
    let relevance: f64 = theta.alphas.iter().zip(&pos).map(|(a, p)| a * p).sum();
    let distraction: f64 = theta.betas.iter().zip(&neg).map(|(b, n)| b * n).sum();
    Ok(relevance + distraction)
}

/// Learnable metric with per-position weights. The weights are applied as
/// given; negative weights are neither clamped nor renormalised.
pub fn udcg_theta(u: &ContextUtilities, theta: &ThetaWeights) -> Result<f64, MetricError> {
    udcg_theta_linear(u, theta).map(sigmoid)
}
