//! Context-level scoring with any of the supported metrics.

use std::fmt;
use std::str::FromStr;

use crate::classic;
use crate::error::MetricError;
use crate::model::ThetaWeights;
use crate::trainer::{build_features_with, score_features, FeatureMode};
use crate::udcg::{self, ContextUtilities, DEFAULT_GAMMA};

/// What a metric may look at for one context: binary relevance and signed
/// utility of every passage, in prompt order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextView {
    pub relevant: Vec<bool>,
    pub utilities: ContextUtilities,
}

impl ContextView {
    pub fn new(relevant: Vec<bool>, utilities: ContextUtilities) -> Result<Self, MetricError> {
        if relevant.len() != utilities.k() {
            return Err(MetricError::DimensionMismatch {
                expected: utilities.k(),
                actual: relevant.len(),
            });
        }
        Ok(ContextView { relevant, utilities })
    }

    pub fn k(&self) -> usize {
        self.relevant.len()
    }

    pub fn gains(&self) -> Vec<f64> {
        classic::RelevanceVector::from_binary(&self.relevant).gains().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Ndcg,
    Mrr,
    Map,
    Precision,
    Hits,
    Udcg { gamma: f64 },
    UdcgTheta { theta: ThetaWeights, mode: FeatureMode },
}

impl Metric {
    pub fn udcg() -> Self {
        Metric::Udcg { gamma: DEFAULT_GAMMA }
    }

    pub fn udcg_theta(theta: ThetaWeights) -> Self {
        Metric::UdcgTheta {
            theta,
            mode: FeatureMode::Full,
        }
    }

    /// Column name used in reports.
    pub fn name(&self) -> String {
        match self {
            Metric::Ndcg => "ndcg".into(),
            Metric::Mrr => "mrr".into(),
            Metric::Map => "map".into(),
            Metric::Precision => "precision".into(),
            Metric::Hits => "hits".into(),
            Metric::Udcg { gamma } if *gamma == DEFAULT_GAMMA => "udcg".into(),
            Metric::Udcg { gamma } if *gamma == 0.0 => "udcg_rel_only".into(),
            Metric::Udcg { gamma } => format!("udcg@{gamma}"),
            Metric::UdcgTheta { mode, .. } => match mode {
                FeatureMode::Full => "udcg_theta".into(),
                FeatureMode::RelevanceOnly => "udcg_theta_rel_only".into(),
                FeatureMode::Binary => "udcg_theta_binary".into(),
            },
        }
    }

    pub fn score(&self, view: &ContextView) -> Result<f64, MetricError> {
        match self {
            Metric::Ndcg => classic::ndcg(&view.gains()),
            Metric::Mrr => classic::reciprocal_rank(&view.gains()),
            Metric::Map => {
                let gains = view.gains();
                let in_context = gains.iter().filter(|&&g| g == 1.0).count();
                classic::average_precision(&gains, in_context)
            }
            Metric::Precision => classic::precision_at_k(&view.gains()),
            Metric::Hits => classic::hits_at_k(&view.gains()).map(f64::from),
            Metric::Udcg { gamma } => udcg::udcg(&view.utilities, *gamma),
            Metric::UdcgTheta { theta, mode } => {
                if theta.k != view.k() {
                    return Err(MetricError::DimensionMismatch {
                        expected: theta.k,
                        actual: view.k(),
                    });
                }
                match mode {
                    FeatureMode::Full => udcg::udcg_theta(&view.utilities, theta),
                    _ => Ok(score_features(
                        theta,
                        &build_features_with(&view.utilities, &view.relevant, *mode),
                    )),
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A metric name without its parameters, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Map,
    Precision,
    Hits,
    Udcg,
    UdcgTheta,
}

impl MetricKind {
    pub const CLASSIC: [MetricKind; 5] = [
        MetricKind::Ndcg,
        MetricKind::Mrr,
        MetricKind::Map,
        MetricKind::Precision,
        MetricKind::Hits,
    ];

    pub fn needs_theta(self) -> bool {
        self == MetricKind::UdcgTheta
    }

    /// Builds the metric; `theta` is required for [`MetricKind::UdcgTheta`].
    pub fn with_params(self, gamma: f64, theta: Option<&ThetaWeights>) -> Option<Metric> {
        Some(match self {
            MetricKind::Ndcg => Metric::Ndcg,
            MetricKind::Mrr => Metric::Mrr,
            MetricKind::Map => Metric::Map,
            MetricKind::Precision => Metric::Precision,
            MetricKind::Hits => Metric::Hits,
            MetricKind::Udcg => Metric::Udcg { gamma },
            MetricKind::UdcgTheta => Metric::udcg_theta(theta?.clone()),
        })
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "mrr" => MetricKind::Mrr,
            "map" => MetricKind::Map,
            "precision" | "prec" => MetricKind::Precision,
            "hits" => MetricKind::Hits,
            "udcg" => MetricKind::Udcg,
            "udcg_theta" => MetricKind::UdcgTheta,
            other => return Err(format!("unknown metric {other:?}")),
        })
    }
}
