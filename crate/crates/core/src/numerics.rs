//! Dense real linear algebra used throughout the crate.
//!
//! Every matrix in this toolkit is small (the largest is the stacked
//! closed-loop drift, a few dozen rows), so everything here is dense and
//! allocation-happy. The heavy lifting is delegated to `nalgebra`; this
//! module pins down the contracts the rest of the crate relies on
//! (pivot thresholds, ascending eigenvalue order, finiteness checks).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Pivots smaller than this are treated as exact zeros by [`solve_linear`].
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Largest tolerated asymmetry `max|S - S^T|` accepted by [`sym_eigen`].
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected} rows, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("singular matrix (pivot magnitude {pivot:e})")]
    SingularMatrix { pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix exponential overflowed")]
    Overflow,
    #[error("non-finite entry in input")]
    NonFinite,
}

fn ensure_square(a: &Mat) -> Result<(), NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

fn ensure_finite(a: &Mat) -> Result<(), NumericsError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Largest absolute entry, zero for an empty matrix.
pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Symmetric part `(S + S^T) / 2`.
pub fn sym_part(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

/// Solves `A Z = b` by LU factorisation with partial pivoting.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat, NumericsError> {
    ensure_square(a)?;
    if b.nrows() != a.nrows() {
        return Err(NumericsError::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    let lu = a.clone().lu();
    let u = lu.u();
    let pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if a.nrows() > 0 && pivot < PIVOT_FLOOR {
        return Err(NumericsError::SingularMatrix { pivot });
    }
    lu.solve(b)
        .ok_or(NumericsError::SingularMatrix { pivot })
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending
/// order; column `k` of the returned matrix pairs with eigenvalue `k`.
pub fn sym_eigen(s: &Mat) -> Result<(Vec<f64>, Mat), NumericsError> {
    ensure_square(s)?;
    ensure_finite(s)?;
    let asymmetry = max_abs(&(s - s.transpose()));
    if asymmetry > SYMMETRY_TOL {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    let n = s.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let eig = sym_part(s).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(s: &Mat) -> Result<f64, NumericsError> {
    let (values, _) = sym_eigen(s)?;
    Ok(values.last().copied().unwrap_or(f64::NEG_INFINITY))
}

/// `e^{A t}` by scaling and squaring around a Padé core.
pub fn expm(a: &Mat, t: f64) -> Result<Mat, NumericsError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    if !t.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let scaled = a * t;
    let out = scaled.exp();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(NumericsError::Overflow)
    }
}

/// Induced 2-norm, `sqrt(lambda_max(A^T A))`.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = sym_part(&(a.transpose() * a));
    match lambda_max(&gram) {
        Ok(v) => v.max(0.0).sqrt(),
        Err(_) => f64::NAN,
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Builds a matrix from row slices; panics on ragged input (use for literals).
pub fn mat_from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    assert!(rows.iter().all(|row| row.len() == c), "ragged matrix literal");
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

/// Square diagonal matrix from a slice of diagonal entries.
pub fn diag(entries: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.shape() == b.shape() && max_abs(&(a - b)) <= tol
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let b = mat_from_rows(&[&[1.0, -2.0], &[3.5, 0.0], &[7.0, 1e-3]]);
        let z = solve_linear(&Mat::identity(3, 3), &b).unwrap();
        assert!(close(&z, &b, 0.0));
    }

    #[test]
    fn solve_diagonal() {
        let a = mat_from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let b = mat_from_rows(&[&[2.0], &[8.0]]);
        let z = solve_linear(&a, &b).unwrap();
        assert!(close(&z, &mat_from_rows(&[&[1.0], &[2.0]]), 1e-15));
    }

    #[test]
    fn solve_permutation_needs_pivoting() {
        let a = mat_from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let b = mat_from_rows(&[&[3.0], &[5.0]]);
        let z = solve_linear(&a, &b).unwrap();
        // substitution: row 1 reads z2 = 3, row 2 reads z1 = 5
        assert!(close(&z, &mat_from_rows(&[&[5.0], &[3.0]]), 1e-15));
    }

    #[test]
    fn solve_rejects_singular_and_bad_shapes() {
        let a = mat_from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let b = Mat::zeros(2, 1);
        assert!(matches!(
            solve_linear(&a, &b),
            Err(NumericsError::SingularMatrix { .. })
        ));
        assert!(matches!(
            solve_linear(&Mat::zeros(2, 3), &b),
            Err(NumericsError::NotSquare { .. })
        ));
        assert!(matches!(
            solve_linear(&Mat::identity(3, 3), &b),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sym_eigen_examples() {
        let (v, _) = sym_eigen(&Mat::identity(2, 2)).unwrap();
        assert_eq!(v, vec![1.0, 1.0]);

        let (v, _) = sym_eigen(&mat_from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(v[0].abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);

        // roots of λ² + 4.875λ + (3.69140625 - 1.12890625) from the
        // characteristic polynomial of the 2x2 below
        let s = mat_from_rows(&[&[-3.9375, 1.0625], &[1.0625, -0.9375]]);
        let (tr, det) = (-4.875_f64, 3.69140625 - 1.12890625);
        let disc = (tr * tr - 4.0 * det).sqrt();
        let (lo, hi) = ((tr - disc) / 2.0, (tr + disc) / 2.0);
        let (v, vecs) = sym_eigen(&s).unwrap();
        assert!((v[0] - lo).abs() < 1e-12 && (v[1] - hi).abs() < 1e-12);
        assert!((v[0] + 4.2757).abs() < 1e-4 && (v[1] + 0.5993).abs() < 1e-4);
        let recon = &vecs * diag(&v) * vecs.transpose();
        assert!(close(&recon, &s, 1e-12));
    }

    #[test]
    fn sym_eigen_rejects_asymmetric() {
        let s = mat_from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(
            sym_eigen(&s),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn expm_examples() {
        let e = expm(&Mat::zeros(3, 3), 17.0).unwrap();
        assert!(close(&e, &Mat::identity(3, 3), 0.0));

        let a0 = mat_from_rows(&[&[0.01, 0.01], &[0.0, 0.0]]);
        let e = expm(&a0, 10.0).unwrap();
        let g = 0.1_f64.exp();
        let expected = mat_from_rows(&[&[g, g - 1.0], &[0.0, 1.0]]);
        assert!(close(&e, &expected, 1e-12));

        let e = expm(&diag(&[-1.0, -2.0]), 1.0).unwrap();
        assert!(close(&e, &diag(&[(-1.0_f64).exp(), (-2.0_f64).exp()]), 1e-15));
    }

    #[test]
    fn expm_large_argument_relative_accuracy() {
        // rotation generator scaled so that ‖At‖ = 50
        let a = mat_from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let e = expm(&a, 50.0).unwrap();
        let (c, s) = (50.0_f64.cos(), 50.0_f64.sin());
        let expected = mat_from_rows(&[&[c, s], &[-s, c]]);
        assert!(close(&e, &expected, 1e-9));
    }

    #[test]
    fn expm_overflow_is_reported() {
        let a = diag(&[1.0]);
        assert_eq!(expm(&a, 1e4), Err(NumericsError::Overflow));
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&Mat::identity(4, 4)) - 1.0).abs() < 1e-15);
        let a0 = mat_from_rows(&[&[0.01, 0.01], &[0.0, 0.0]]);
        // A^T A = [[1e-4, 1e-4], [1e-4, 1e-4]] has eigenvalues {0, 2e-4}
        assert!((spectral_norm(&a0) - 2e-4_f64.sqrt()).abs() < 1e-15);
        assert_eq!(spectral_norm(&Mat::zeros(2, 3)), 0.0);
    }
}
