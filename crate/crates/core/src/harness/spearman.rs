//! Tie-corrected Spearman rank correlation.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpearmanError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("both inputs are constant")]
    BothConstant,
    #[error("non-finite input")]
    NonFinite,
}

/// 1-based ranks where tied values share the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation of the average ranks of `x` and `y`.
///
/// Exactly one constant input yields 0 (no co-variation); two constant
/// inputs are an error.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, SpearmanError> {
    if x.len() != y.len() {
        return Err(SpearmanError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(SpearmanError::TooShort(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SpearmanError::NonFinite);
    }
    if is_constant(x) && is_constant(y) {
        return Err(SpearmanError::BothConstant);
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Whether a correlation against `values` is defined.
pub fn has_variation(values: &[f64]) -> bool {
    values.len() >= 2 && !is_constant(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn examples() {
        assert_eq!(spearman(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        assert_eq!(spearman(&[1., 2., 3.], &[10., 20., 30.]).unwrap(), 1.0);
        // ranks x = [1.5, 1.5, 3], y = [3, 1.5, 1.5]; centred [-.5,-.5,1] and [1,-.5,-.5]
        // cross sum -0.75, squared sums 1.5 each: rho = -1/2 (scipy agrees)
        assert_abs_diff_eq!(spearman(&[1., 1., 2.], &[2., 1., 1.]).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(spearman(&[1., 2.], &[1.]), Err(SpearmanError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.], &[1.]), Err(SpearmanError::TooShort(1)));
        assert_eq!(spearman(&[3., 3.], &[1., 1.]), Err(SpearmanError::BothConstant));
        assert_eq!(spearman(&[f64::NAN, 1.], &[1., 2.]), Err(SpearmanError::NonFinite));
        assert_eq!(spearman(&[3., 3., 3.], &[1., 2., 3.]).unwrap(), 0.0);
    }
}
