//! Small dense symmetric-matrix helpers shared by the covariance and
//! aggregation stages.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Largest admissible condition number for any matrix we factor.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalue extremes of a symmetric matrix. Empty matrices report `(1, 1)`.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (1.0, 1.0);
    }
    let eig = m.clone().symmetric_eigen();
    let lo = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Condition number of a symmetric matrix, `inf` when it is not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    if !(lo > 0.0) || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factor of a symmetric positive definite matrix, refusing
/// anything whose condition number exceeds [`MAX_CONDITION`].
pub fn guarded_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("matrix has non-finite entries".into());
    }
    let cond = condition_number(m);
    if cond > MAX_CONDITION {
        return Err(format!(
            "condition number {cond:.3e} exceeds {MAX_CONDITION:e}"
        ));
    }
    Cholesky::new(m.clone()).ok_or_else(|| "Cholesky factorization failed".to_string())
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let inv = guarded_cholesky(m)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, String> {
    Ok(guarded_cholesky(m)?.solve(rhs))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Nearest positive semi-definite matrix in Frobenius norm: negative
/// eigenvalues are zeroed. Returns the input unchanged (bitwise) and `false`
/// when it already is PSD.
pub fn project_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if m.nrows() == 0 {
        return (m.clone(), false);
    }
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return (m.clone(), false);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    (symmetrize(&out), true)
}

/// Trailing `k x k` block of a square matrix.
pub fn trailing_block(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = m.nrows();
    m.view((n - k, n - k), (k, k)).into_owned()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}
