//! Small dense helpers shared across modules. Symmetric eigenproblems go
//! through nalgebra's `SymmetricEigen`; nonsymmetric spectra live in
//! [`crate::eigen`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn require_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// `‖M − Mᵀ‖_F / ‖M‖_F`, or 0 for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Accepts `m` if it is symmetric to [`SYMMETRY_TOL`] and returns its
/// symmetric part.
pub fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(m)?;
    let relative = relative_asymmetry(m);
    if relative > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { relative });
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Eigenpairs of a symmetric matrix, eigenvalues in non-increasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Best rank-`r` approximation of a symmetric matrix (Eckart–Young).
///
/// Keeps the `r` eigenpairs of largest magnitude. Ordering is by magnitude
/// descending, then eigenvalue descending, then original index, so ties are
/// resolved deterministically.
pub fn truncated_eig(sym: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let sym = symmetrized(sym)?;
    let n = sym.nrows();
    if r >= n {
        return Ok(sym);
    }
    let eig = SymmetricEigen::new(sym);
    let vals = &eig.eigenvalues;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        vals[b]
            .abs()
            .total_cmp(&vals[a].abs())
            .then(vals[b].total_cmp(&vals[a]))
            .then(a.cmp(&b))
    });
    let mut out = DMatrix::zeros(n, n);
    for &k in order.iter().take(r) {
        let v = eig.eigenvectors.column(k);
        out += vals[k] * &v * v.transpose();
    }
    Ok(out)
}

/// `‖QᵀQ − I‖_F` for a matrix with orthonormal columns.
pub fn gram_deviation(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    (gram - DMatrix::identity(q.ncols(), q.ncols())).norm()
}
