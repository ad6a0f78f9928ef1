//! Small dense linear-algebra helpers shared by the model, dynamics and oracle code.

use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue modulus, computed from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Numerical rank from singular values, with threshold `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}

/// Entrywise absolute value.
pub fn abs_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::abs)
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (maximum absolute row sum).
pub fn matrix_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Left eigenvector `g` of a row-stochastic matrix for eigenvalue 1, normalised so
/// that its entries sum to one.
///
/// Solves `(M^T - I) g = 0` with the last equation replaced by `1^T g = 1`. Returns
/// `None` when that system is singular, i.e. the unit eigenvalue is not simple.
pub fn left_perron_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let mut sys = m.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    sys.lu().solve(&rhs)
}

/// Limit of `M^k` by repeated squaring. Stops once `P = M^(2^k)` is fixed by one more
/// multiplication (`|P M - P| < tol`), which also rejects periodic powers; `None` if
/// that never happens within `max_squarings`.
pub fn power_limit(m: &DMatrix<f64>, tol: f64, max_squarings: usize) -> Option<DMatrix<f64>> {
    let mut current = m.clone();
    for _ in 0..max_squarings {
        if (&current * m - &current).amax() < tol {
            return Some(current);
        }
        if !current.iter().all(|x| x.is_finite()) {
            return None;
        }
        current = &current * &current;
    }
    None
}

/// Row-major nested vectors to a dense matrix. Ragged input yields `None`.
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
