//! Thin wrappers over `nalgebra` for the few dense solves the crate needs.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Inverse of a row-major `n x n` matrix.
pub fn inverse(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let inv = m.try_inverse().ok_or_else(|| Error::Singular("matrix inverse".into()))?;
    Ok(inv.transpose().as_slice().to_vec())
}

/// Eigen-decomposition of a symmetric row-major matrix, eigenvalues sorted
/// descending. Eigenvectors are returned as rows.
pub fn symmetric_eigen(n: usize, a: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors)
}

/// Solve `(X^T X + lambda I) W = X^T Y` for `W` (`p x q`), where `x` holds
/// `n` rows of length `p` and `y` holds `n` rows of length `q`.
pub fn ridge(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Empty("ridge regression needs matching non-empty rows".into()));
    }
    let p = x[0].len();
    let q = y[0].len();
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let ym = DMatrix::from_fn(n, q, |i, j| y[i][j]);
    let mut gram = xm.transpose() * &xm;
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let rhs = xm.transpose() * ym;
    let chol = gram.cholesky().ok_or_else(|| Error::Singular("ridge normal equations".into()))?;
    let w = chol.solve(&rhs);
    Ok((0..p).map(|i| (0..q).map(|j| w[(i, j)]).collect()).collect())
}
