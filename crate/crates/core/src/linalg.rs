//! Small dense linear algebra on top of nalgebra.
//!
//! Everything here works on matrices of moment or parameter dimension, so
//! allocation per call is fine.

use nalgebra::{DMatrix, DVector};

/// Condition number above which inversions log a warning.
pub const CONDITION_WARN: f64 = 1e12;

/// Solves `a x = b` for symmetric positive definite `a`.
///
/// Tries a plain Cholesky factorization first; if that fails, a ridge of
/// `1e-10 * trace(a)` is added once before giving up.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let ridge = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE);
    let mut shifted = a.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += ridge;
    }
    shifted.cholesky().map(|chol| chol.solve(b))
}

/// Inverse through a column-pivoted QR decomposition.
///
/// Returns `None` when the matrix is numerically singular, i.e. the smallest
/// pivot of `R` is below `n * eps` relative to the largest.
pub fn pivoted_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    assert_eq!(a.nrows(), a.ncols(), "pivoted_inverse needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= max * f64::EPSILON * n as f64 {
        return None;
    }
    let cond = max / min;
    if cond > CONDITION_WARN {
        log::warn!("inverting a matrix with estimated condition number {cond:.3e}");
    }
    qr.try_inverse()
}

/// `(a + a') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Copies a row-major slice into a matrix.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}
