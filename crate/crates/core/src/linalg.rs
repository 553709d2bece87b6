//! Dense least squares.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Singular values below `RANK_TOL * max(sigma)` are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Minimum-norm least-squares solution of `design * beta ~ targets`, where
/// `design` is `rows x cols` row-major.
///
/// Rank-deficient designs get the pseudo-inverse solution. An empty design
/// (`cols == 0`) yields an empty coefficient vector.
pub fn least_squares(design: &[f64], rows: usize, cols: usize, targets: &[f64]) -> Vec<f64> {
    assert_eq!(design.len(), rows * cols, "design shape");
    assert_eq!(targets.len(), rows, "target length");
    if cols == 0 || rows == 0 {
        return alloc::vec![0.0; cols];
    }
    let a = DMatrix::from_row_slice(rows, cols, design);
    let b = DVector::from_column_slice(targets);
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return alloc::vec![0.0; cols];
    }
    let beta = svd.solve(&b, RANK_TOL * max_sv).expect("u and v were computed");
    beta.iter().copied().collect()
}

/// Classical OLS standard errors `sqrt(s² (AᵀA)⁻¹_jj)` with
/// `s² = RSS / (rows - cols)`. `None` when the design is rank deficient or
/// leaves no residual degrees of freedom.
pub fn standard_errors(design: &[f64], rows: usize, cols: usize, targets: &[f64], beta: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(design.len(), rows * cols, "design shape");
    if cols == 0 || rows <= cols {
        return None;
    }
    let a = DMatrix::from_row_slice(rows, cols, design);
    let fitted = &a * DVector::from_column_slice(beta);
    let rss: f64 = fitted.iter().zip(targets).map(|(f, y)| (y - f) * (y - f)).sum();
    let s2 = rss / (rows - cols) as f64;
    let inv = (a.transpose() * &a).cholesky()?.inverse();
    Some((0..cols).map(|j| libm::sqrt(s2 * inv[(j, j)])).collect())
}
