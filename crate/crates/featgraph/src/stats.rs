//! Summary statistics for replicate runs.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn std_error(xs: &[f64]) -> Option<f64> {
    Some(sample_sd(xs)? / (xs.len() as f64).sqrt())
}

/// One-sided lower confidence bound `mean - t_{level, n-1} * s / sqrt(n)`.
///
/// Needs two values; with zero spread the bound is the mean itself.
pub fn lower_confidence_bound(xs: &[f64], level: f64) -> Option<f64> {
    let m = mean(xs)?;
    let s = sample_sd(xs)?;
    if s == 0.0 {
        return Some(m);
    }
    let dof = (xs.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, dof).ok()?.inverse_cdf(level);
    Some(m - t * s / (xs.len() as f64).sqrt())
}
