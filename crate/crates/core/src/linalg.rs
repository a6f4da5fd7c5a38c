//! Small dense helpers shared by the engines.

use nalgebra::{DMatrix, SymmetricEigen};

/// Relative tolerance for symmetry and PSD checks, scaled by the max-norm.
pub const SYM_TOL: f64 = 1e-9;

/// Largest absolute entry.
pub fn max_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Max-norm of `M - Mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_norm(&(m - m.transpose()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// True when the smallest eigenvalue of the symmetrized matrix is at least
/// `-SYM_TOL * max_norm`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -SYM_TOL * max_norm(m)
}

/// Factor `L` with `L Lᵀ = M` for a symmetric PSD `M`, from the eigen
/// decomposition with negative eigenvalues clamped to zero. Returns the
/// smallest eigenvalue as the error when it is below `-SYM_TOL * max_norm`.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lo < -SYM_TOL * max_norm(m) {
        return Err(lo);
    }
    let mut factor = eig.eigenvectors;
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_handles_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m).unwrap();
        let back = &l * l.transpose();
        assert!((back - m).abs().max() < 1e-12);
        assert!(psd_factor(&DMatrix::zeros(3, 3)).is_ok());
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let lo = psd_factor(&m).unwrap_err();
        assert!((lo + 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_product_matches_dense() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, 3.0, 0.0]);
        assert!((trace_product(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
    }
}
