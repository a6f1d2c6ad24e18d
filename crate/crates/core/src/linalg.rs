//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, RrmeError};

pub(crate) fn cholesky<F: FnOnce() -> String>(m: DMatrix<f64>, context: F) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RrmeError::Numerical(format!("{}: non-finite entries", context())));
    }
    m.cholesky()
        .ok_or_else(|| RrmeError::Numerical(format!("{}: matrix is not positive definite", context())))
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub(crate) fn solve_spd<F: FnOnce() -> String>(a: DMatrix<f64>, b: &DVector<f64>, context: F) -> Result<DVector<f64>> {
    Ok(cholesky(a, context)?.solve(b))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in
/// non-increasing order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Flip columns so that the entry of largest magnitude in each is positive.
/// Returns the applied signs.
pub(crate) fn normalize_column_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        let s = if best < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            col.neg_mut();
        }
        signs.push(s);
    }
    signs
}
