//! Oracle re-ranking: pick the best `k` of the top-`m` retrieved passages by
//! their annotations.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{EvalContext, JudgmentIndex, RankedEntry, RankedList, UtilityIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankMode {
    /// Descending signed utility.
    Utility,
    /// Relevant before irrelevant.
    Binary,
}

impl RerankMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RerankMode::Utility => "utility",
            RerankMode::Binary => "binary",
        }
    }
}

impl std::str::FromStr for RerankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utility" => Ok(RerankMode::Utility),
            "binary" => Ok(RerankMode::Binary),
            other => Err(format!("unknown rerank mode {other:?} (expected utility or binary)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("m = {m} is smaller than k = {k}")]
    CutoffBelowK { m: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("ranking for {question_id:?} has {available} entries, need at least {k}")]
    InsufficientEntries {
        question_id: String,
        available: usize,
        k: usize,
    },
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
}

struct Candidate<'a> {
    entry: &'a RankedEntry,
    relevant: bool,
    utility: f64,
}

/// Selects `k` passages from the first `m` entries of `ranking`.
///
/// * `Utility` mode sorts by descending utility; ties go to the relevant
///   passage, then to the higher retrieval score, then to the smaller id.
///   Relevant utilities are never negative and irrelevant ones never
///   positive, so no irrelevant passage precedes a relevant one.
/// * `Binary` mode puts relevant passages first, each group by descending
///   retrieval score, then by id.
///
/// The selection order becomes the prompt order of the returned context.
pub fn oracle_rerank(
    ranking: &RankedList,
    utilities: &UtilityIndex,
    judgments: &JudgmentIndex,
    m: usize,
    k: usize,
    mode: RerankMode,
) -> Result<EvalContext, RerankError> {
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    if m < k {
        return Err(RerankError::CutoffBelowK { m, k });
    }
    let qid = &ranking.question_id;
    if ranking.entries.len() < k {
        return Err(RerankError::InsufficientEntries {
            question_id: qid.clone(),
            available: ranking.entries.len(),
            k,
        });
    }
    let mut candidates = ranking
        .entries
        .iter()
        .take(m)
        .map(|entry| {
            let relevant = *judgments.get(qid, &entry.passage_id).ok_or_else(|| {
                RerankError::MissingJudgment {
                    question_id: qid.clone(),
                    passage_id: entry.passage_id.clone(),
                }
            })?;
            let utility = match mode {
                RerankMode::Binary => 0.0,
                RerankMode::Utility => *utilities.get(qid, &entry.passage_id).ok_or_else(|| {
                    RerankError::MissingAnnotation {
                        question_id: qid.clone(),
                        passage_id: entry.passage_id.clone(),
                    }
                })?,
            };
            Ok(Candidate {
                entry,
                relevant,
                utility,
            })
        })
        .collect::<Result<Vec<_>, RerankError>>()?;

    candidates.sort_by(|a, b| {
        let primary = match mode {
            RerankMode::Utility => b.utility.total_cmp(&a.utility),
            RerankMode::Binary => Ordering::Equal,
        };
        primary
            .then(b.relevant.cmp(&a.relevant))
            .then(b.entry.score.total_cmp(&a.entry.score))
            .then(a.entry.passage_id.cmp(&b.entry.passage_id))
    });

    Ok(EvalContext {
        question_id: qid.clone(),
        context_id: format!("{qid}/oracle-{}", mode.as_str()),
        passage_ids: candidates
            .iter()
            .take(k)
            .map(|c| c.entry.passage_id.clone())
            .collect(),
        outcome: None,
    })
}
