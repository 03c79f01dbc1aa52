//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenpairs of the symmetric-definite pencil `A u = λ B u`, sorted by
/// descending eigenvalue. Eigenvectors are `B`-orthonormal.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Solves `A u = λ B u` for symmetric `A` and symmetric positive-definite `B`
/// by Cholesky reduction `B = L Lᵀ`, `C = L⁻¹ A L⁻ᵀ`.
pub fn generalized_symmetric_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "pencil needs square matrices of equal size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = b.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "right-hand scatter ({n}x{n}, trace {:.3e}) is not positive definite",
            b.trace()
        ))
    })?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sorted_vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let vectors = l
        .transpose()
        .solve_upper_triangular(&sorted_vecs)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    Ok(GeneralizedEigen { values, vectors })
}

/// Scales each column to unit norm and flips it so that its largest-magnitude
/// entry is positive.
pub fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Orthonormal basis of the column span (thin QR).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Sine of the largest principal angle between the column spans of `a` and
/// `b` (same column count).
pub fn max_principal_angle_sin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let residual = &qb - &qa * (qa.transpose() * &qb);
    residual.singular_values().max()
}

/// Lower-triangular `B` with `B M Bᵀ = I`, i.e. the inverse of the Cholesky
/// factor of `M` (so `BᵀB = M⁻¹`).
pub fn inverse_cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{n}x{n} covariance is not positive definite")))?;
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_residuals() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let ge = generalized_symmetric_eigen(&a, &b).unwrap();
        for k in 0..3 {
            let u = ge.vectors.column(k);
            let r = &a * u - ge.values[k] * (&b * u);
            assert!(r.amax() < 1e-10 * a.amax());
        }
        assert!(ge.values[0] >= ge.values[1] && ge.values[1] >= ge.values[2]);
        let gram = ge.vectors.transpose() * &b * &ge.vectors;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn indefinite_rhs_is_reported() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(generalized_symmetric_eigen(&a, &b), Err(Error::Numerical(_))));
    }

    #[test]
    fn principal_angle_of_same_span() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 1.0, -1.0, 0.0, 0.0]);
        assert!(max_principal_angle_sin(&a, &b) < 1e-12);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((max_principal_angle_sin(&a, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_cholesky_whitens() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let b = inverse_cholesky_factor(&m).unwrap();
        assert_eq!(b[(0, 1)], 0.0);
        assert!((&b * &m * b.transpose() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
