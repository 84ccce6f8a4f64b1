//! Traditional ranking metrics, all evaluated with a cutoff at the length of
//! the gain vector.
//!
//! Binary metrics (precision, hits, reciprocal rank, average precision)
//! reject gains other than 0 and 1. DCG and nDCG accept any non-negative gain.

use crate::error::MetricError;

/// Per-position gains of a ranked list or prompt context.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector(Vec<f64>);

impl RelevanceVector {
    pub fn new(gains: Vec<f64>) -> Result<Self, MetricError> {
        check_non_negative(&gains)?;
        Ok(RelevanceVector(gains))
    }

    pub fn from_binary(relevant: &[bool]) -> Self {
        RelevanceVector(relevant.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect())
    }

    pub fn gains(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

fn check_non_negative(gains: &[f64]) -> Result<(), MetricError> {
    if gains.is_empty() {
        return Err(MetricError::Empty);
    }
    for (i, &g) in gains.iter().enumerate() {
        if !g.is_finite() {
            return Err(MetricError::NonFinite(g));
        }
        if g < 0.0 {
            return Err(MetricError::NegativeGain {
                position: i + 1,
                value: g,
            });
        }
    }
    Ok(())
}

fn check_binary(gains: &[f64]) -> Result<(), MetricError> {
    if gains.is_empty() {
        return Err(MetricError::Empty);
    }
    match gains.iter().position(|&g| g != 0.0 && g != 1.0) {
        Some(i) => Err(MetricError::NonBinaryGain {
            position: i + 1,
            value: gains[i],
        }),
        None => Ok(()),
    }
}

fn hits_in(gains: &[f64]) -> usize {
    gains.iter().filter(|&&g| g == 1.0).count()
}

pub fn precision_at_k(gains: &[f64]) -> Result<f64, MetricError> {
    check_binary(gains)?;
    Ok(hits_in(gains) as f64 / gains.len() as f64)
}

pub fn hits_at_k(gains: &[f64]) -> Result<u8, MetricError> {
    check_binary(gains)?;
    Ok(u8::from(gains.contains(&1.0)))
}

/// `1 / rank` of the first relevant item; 0 when nothing is relevant.
pub fn reciprocal_rank(gains: &[f64]) -> Result<f64, MetricError> {
    check_binary(gains)?;
    Ok(gains
        .iter()
        .position(|&g| g == 1.0)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// Average precision normalised by `r_total`, the number of relevant items
/// that exist for the query (within the cutoff). Returns 0 when `r_total` is 0
/// and the list holds no relevant item.
pub fn average_precision(gains: &[f64], r_total: usize) -> Result<f64, MetricError> {
    check_binary(gains)?;
    let hits = hits_in(gains);
    if r_total < hits {
        return Err(MetricError::RelevantTotalTooSmall { r_total, hits });
    }
    if r_total == 0 {
        return Ok(0.0);
    }
    let mut seen = 0usize;
    let mut sum = 0.0;
    for (i, &g) in gains.iter().enumerate() {
        if g == 1.0 {
            seen += 1;
            sum += seen as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / r_total as f64)
}

pub fn dcg(gains: &[f64]) -> Result<f64, MetricError> {
    check_non_negative(gains)?;
    Ok(dcg_unchecked(gains))
}

fn dcg_unchecked(gains: &[f64]) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(i, &g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// DCG divided by the DCG of the same gains sorted in descending order;
/// 0 when no gain is positive.
pub fn ndcg(gains: &[f64]) -> Result<f64, MetricError> {
    check_non_negative(gains)?;
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_unchecked(&ideal);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_unchecked(gains) / idcg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&[1., 0., 1., 0., 0.]).unwrap(), 0.4);
        assert_eq!(precision_at_k(&[0., 0., 0.]).unwrap(), 0.0);
        assert_eq!(precision_at_k(&[1., 1., 1., 1.]).unwrap(), 1.0);
    }

    #[test]
    fn hits_examples() {
        assert_eq!(hits_at_k(&[0., 0., 1.]).unwrap(), 1);
        assert_eq!(hits_at_k(&[0., 0., 0.]).unwrap(), 0);
        assert_eq!(hits_at_k(&[1., 1., 0.]).unwrap(), 1);
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_abs_diff_eq!(reciprocal_rank(&[0., 0., 1., 0., 0.]).unwrap(), 1.0 / 3.0);
        assert_eq!(reciprocal_rank(&[1., 0., 0.]).unwrap(), 1.0);
        assert_eq!(reciprocal_rank(&[0., 0., 0.]).unwrap(), 0.0);
    }

    #[test]
    fn average_precision_examples() {
        assert_abs_diff_eq!(average_precision(&[1., 0., 1.], 2).unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(average_precision(&[0., 0., 0.], 3).unwrap(), 0.0);
        assert_eq!(average_precision(&[1., 1.], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[0., 0.], 0).unwrap(), 0.0);
    }

    #[test]
    fn average_precision_rejects_small_total() {
        assert_eq!(
            average_precision(&[1., 1., 0.], 1),
            Err(MetricError::RelevantTotalTooSmall { r_total: 1, hits: 2 })
        );
    }

    #[test]
    fn dcg_examples() {
        assert_abs_diff_eq!(dcg(&[1., 0., 1.]).unwrap(), 1.5, epsilon = 1e-15);
        assert_eq!(dcg(&[0., 0., 0.]).unwrap(), 0.0);
        assert_eq!(dcg(&[3.5]).unwrap(), 3.5);
    }

    #[test]
    fn ndcg_examples() {
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert_abs_diff_eq!(ndcg(&[1., 0., 1.]).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.9197, epsilon = 1e-4);
        assert_eq!(ndcg(&[3., 2., 2., 0.]).unwrap(), 1.0);
        assert_eq!(ndcg(&[0., 0.]).unwrap(), 0.0);
    }

    #[test]
    fn binary_metrics_reject_graded_gains() {
        let graded = [1.0, 0.5];
        assert_eq!(
            precision_at_k(&graded),
            Err(MetricError::NonBinaryGain { position: 2, value: 0.5 })
        );
        assert!(hits_at_k(&graded).is_err());
        assert!(reciprocal_rank(&graded).is_err());
        assert!(average_precision(&graded, 2).is_err());
        assert!(ndcg(&graded).is_ok());
    }

    #[test]
    fn negative_gain_is_rejected() {
        assert_eq!(
            dcg(&[1.0, -0.1]),
            Err(MetricError::NegativeGain { position: 2, value: -0.1 })
        );
        assert!(ndcg(&[-1.0]).is_err());
        assert!(RelevanceVector::new(vec![0.0, -2.0]).is_err());
    }

    #[test]
    fn position_sensitivity_witness() {
        assert_eq!(precision_at_k(&[1., 0.]).unwrap(), precision_at_k(&[0., 1.]).unwrap());
        assert!(reciprocal_rank(&[1., 0.]).unwrap() != reciprocal_rank(&[0., 1.]).unwrap());
        assert!(dcg(&[1., 0.]).unwrap() != dcg(&[0., 1.]).unwrap());
    }

    #[test]
    fn single_relevant_shift_is_monotone() {
        let k = 6;
        let mut prev: Option<(f64, f64, f64, f64)> = None;
        for pos in 0..k {
            let mut g = vec![0.0; k];
            g[pos] = 1.0;
            let cur = (
                ndcg(&g).unwrap(),
                reciprocal_rank(&g).unwrap(),
                average_precision(&g, 1).unwrap(),
                precision_at_k(&g).unwrap(),
            );
            if let Some(p) = prev {
                assert!(cur.0 < p.0 && cur.1 < p.1 && cur.2 < p.2);
                assert_eq!(cur.3, p.3);
            }
            prev = Some(cur);
        }
    }
}
