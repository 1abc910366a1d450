//! Dense symmetric eigenvalue helpers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest `λ` with `det(A − λB) = 0` for symmetric `A` and symmetric
/// positive definite `B`, i.e. `max_x xᵀAx / xᵀBx`.
pub fn gen_eig_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let chol = symmetrize(b)
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular Cholesky factor".into()))?;
    let c = &l_inv * symmetrize(a) * l_inv.transpose();
    Ok(sym_eig_extremes(&c).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn generalized_eigen_diagonal() {
        let a = dmatrix![1.0, 0.0; 0.0, 4.0];
        let b = dmatrix![2.0, 0.0; 0.0, 2.0];
        assert!((gen_eig_max(&a, &b).unwrap() - 2.0).abs() < 1e-14);
        assert!((gen_eig_max(&b, &a).unwrap() - 2.0).abs() < 1e-14);
        assert!(gen_eig_max(&a, &dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
    }

    #[test]
    fn extremes() {
        let (lo, hi) = sym_eig_extremes(&dmatrix![2.0, 1.0; 1.0, 2.0]);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }
}
