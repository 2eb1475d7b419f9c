//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
///
/// Uses faer's divide-and-conquer solver: nalgebra's implicit QR returns
/// NaN or spurious values on the large rank-deficient `H` matrices here.
/// Returns NaN entries if the solver does not converge.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let sym = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut ev = sym
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .unwrap_or_else(|_| vec![f64::NAN; n]);
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of the symmetric part, NaN if the solver failed.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    if ev.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    ev.first().copied().unwrap_or(0.0)
}

/// Numerical rank from singular values with cutoff `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).iter().all(|v| v.abs() <= tol)
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
