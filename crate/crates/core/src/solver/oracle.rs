//! Dense minimum-norm least squares, used as an independent check on the
//! iterative solver.

use nalgebra::{DMatrix, DVector};

use crate::solver::operator::DenseOperator;

/// Minimum-norm least-squares solution via SVD. Singular values below
/// `max(m, n) · σ_max · ε` are treated as zero.
pub fn ls_oracle(a: &DenseOperator, y: &[f64]) -> Vec<f64> {
    assert_eq!(a.rows(), y.len(), "ls_oracle: row count must match y");
    let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
    let svd = m.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = a.rows().max(a.cols()) as f64 * smax * f64::EPSILON;
    let b = DVector::from_column_slice(y);
    svd.solve(&b, eps)
        .expect("SVD was computed with both U and V")
        .iter()
        .copied()
        .collect()
}

/// Numerical rank with the same cut-off as [`ls_oracle`], plus the
/// largest and smallest retained singular values.
pub fn numerical_rank(a: &DenseOperator) -> (usize, f64, f64) {
    let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let eps = a.rows().max(a.cols()) as f64 * smax * f64::EPSILON;
    let kept: Vec<f64> = sv.iter().copied().filter(|&s| s > eps).collect();
    let smin = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    (kept.len(), smax, smin)
}
