//! Domain records shared by every part of the toolkit.
//!
//! All records are plain data: they are validated once when read (see
//! [`crate::io`]) and never mutated afterwards.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub reference_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Binary relevance of a passage for a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub question_id: String,
    pub passage_id: String,
    pub relevant: bool,
}

/// How the abstention probability behind an annotation was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Read from the first-token distribution.
    Logprobs,
    /// Frequency of sentinel answers over sampled completions.
    Sampled,
}

/// Signed utility of a passage for a question.
///
/// `utility` is `+(1 - p_no_response)` for relevant passages and
/// `-(1 - p_no_response)` for irrelevant ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityAnnotation {
    pub question_id: String,
    pub passage_id: String,
    pub p_no_response: f64,
    pub utility: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
}

/// Retrieved passages for one question, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Graded answer outcome of an LLM prompted with a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Wrong,
    Abstain,
    Correct,
}

impl Outcome {
    /// Position in the ideal context ordering: correct 2, abstain 1, wrong 0.
    pub fn ordinal(self) -> u8 {
        match self {
            Outcome::Correct => 2,
            Outcome::Abstain => 1,
            Outcome::Wrong => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Correct => "correct",
            Outcome::Abstain => "abstain",
            Outcome::Wrong => "wrong",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correct" => Ok(Outcome::Correct),
            "abstain" => Ok(Outcome::Abstain),
            "wrong" => Ok(Outcome::Wrong),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

/// An ordered prompt context of `k` passages and, once observed, the answer outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalContext {
    pub question_id: String,
    pub context_id: String,
    pub passage_ids: Vec<String>,
    pub outcome: Option<Outcome>,
}

impl EvalContext {
    pub fn k(&self) -> usize {
        self.passage_ids.len()
    }
}

/// Positional weights of the learnable metric: `alphas` scale the positive
/// utility parts, `betas` the negative ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaWeights {
    pub k: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ThetaWeights {
    /// Weights under which the learnable metric reduces to the training-free one.
    pub fn uniform(k: usize, gamma: f64) -> Self {
        let kf = k as f64;
        ThetaWeights {
            k,
            alphas: vec![1.0 / kf; k],
            betas: vec![gamma / kf; k],
        }
    }

    pub fn zeros(k: usize) -> Self {
        ThetaWeights {
            k,
            alphas: vec![0.0; k],
            betas: vec![0.0; k],
        }
    }

    /// Weight vector in feature layout: alphas then betas.
    pub fn to_vector(&self) -> Vec<f64> {
        self.alphas.iter().chain(&self.betas).copied().collect()
    }

    pub fn from_vector(weights: &[f64]) -> Self {
        assert!(weights.len() % 2 == 0, "weight vector must have even length");
        let k = weights.len() / 2;
        ThetaWeights {
            k,
            alphas: weights[..k].to_vec(),
            betas: weights[k..].to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("theta k must be positive".into());
        }
        if self.alphas.len() != self.k || self.betas.len() != self.k {
            return Err(format!(
                "theta k = {} but got {} alphas and {} betas",
                self.k,
                self.alphas.len(),
                self.betas.len()
            ));
        }
        if let Some(w) = self.to_vector().into_iter().find(|w| !w.is_finite()) {
            return Err(format!("theta contains non-finite weight {w}"));
        }
        Ok(())
    }
}

pub(crate) fn check_id(field: &str, id: &str) -> Result<(), String> {
    if id.is_empty() {
        Err(format!("{field} must be non-empty"))
    } else {
        Ok(())
    }
}

pub(crate) fn check_unique<'a>(
    what: &str,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<(), String> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(format!("duplicate {what} {id:?}"));
        }
    }
    Ok(())
}

/// Lookup of per-(question, passage) values.
#[derive(Debug, Clone, Default)]
pub struct PairIndex<V> {
    inner: std::collections::HashMap<String, std::collections::HashMap<String, V>>,
}

impl<V> PairIndex<V> {
    pub fn new() -> Self {
        PairIndex {
            inner: Default::default(),
        }
    }

    pub fn insert(&mut self, question_id: &str, passage_id: &str, value: V) -> Option<V> {
        self.inner
            .entry(question_id.to_owned())
            .or_default()
            .insert(passage_id.to_owned(), value)
    }

    pub fn get(&self, question_id: &str, passage_id: &str) -> Option<&V> {
        self.inner.get(question_id)?.get(passage_id)
    }

    /// Passage ids with a value for the question, sorted.
    pub fn passages_of(&self, question_id: &str) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .inner
            .get(question_id)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default();
        ids.sort_unstable();
        ids
    }
}

/// Relevance flags by (question, passage).
pub type JudgmentIndex = PairIndex<bool>;

/// Signed utilities by (question, passage).
pub type UtilityIndex = PairIndex<f64>;

impl JudgmentIndex {
    pub fn from_judgments(judgments: &[RelevanceJudgment]) -> Self {
        let mut idx = PairIndex::new();
        for j in judgments {
            idx.insert(&j.question_id, &j.passage_id, j.relevant);
        }
        idx
    }
}

impl UtilityIndex {
    pub fn from_annotations(annotations: &[UtilityAnnotation]) -> Self {
        let mut idx = PairIndex::new();
        for a in annotations {
            idx.insert(&a.question_id, &a.passage_id, a.utility);
        }
        idx
    }
}
