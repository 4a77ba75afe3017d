//! Small dense kernels: Gaussian elimination with partial pivoting for the
//! coefficient systems (k <= 4) and a semidefinite Cholesky factor for
//! generating correlated normals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a system is declared singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-14;

/// Solves `A x = b` by elimination with partial pivoting.
///
/// A pivot smaller than `1e-14 * max|A|` is treated as singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve: A is {}x{}, b has {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let scale = a.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularSystem("matrix is zero or non-finite".into()));
    }
    let threshold = SINGULAR_PIVOT_RTOL * scale;
    let mut m = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, m[(r, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pivot < threshold {
            return Err(Error::SingularSystem(format!(
                "pivot {pivot:e} in column {k}"
            )));
        }
        if p != k {
            m.swap_rows(p, k);
            x.swap_rows(p, k);
        }
        for r in k + 1..n {
            let f = m[(r, k)] / m[(k, k)];
            if f != 0.0 {
                for c in k..n {
                    m[(r, c)] -= f * m[(k, c)];
                }
                x[r] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for c in k + 1..n {
            acc -= m[(k, c)] * x[c];
        }
        x[k] = acc / m[(k, k)];
    }
    Ok(x)
}

/// Inverse by column-wise solves.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = 1.0;
        inv.set_column(c, &solve(a, &e)?);
    }
    Ok(inv)
}

fn norm_1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 1-norm condition number; infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    match inverse(a) {
        Ok(inv) => norm_1(a) * norm_1(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// Lower factor `L` with `L Lᵀ = A` for a positive semidefinite `A`.
///
/// Pivots within `tol` of zero give a zero column, so singular correlation
/// matrices (e.g. perfect correlation) factor exactly. A pivot below `-tol`
/// or a non-zero column under a zero pivot is rejected.
pub fn semidefinite_cholesky(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(
            "cholesky of non-square matrix".into(),
        ));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let tol = tol * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let d = a[(k, k)] - (0..k).map(|j| l[(k, j)] * l[(k, j)]).sum::<f64>();
        if d < -tol {
            return Err(Error::NotPositiveSemidefinite(format!(
                "pivot {d:e} at {k}"
            )));
        }
        if d <= tol {
            for r in k + 1..n {
                let off = a[(r, k)] - (0..k).map(|j| l[(r, j)] * l[(k, j)]).sum::<f64>();
                if off.abs() > tol.sqrt() {
                    return Err(Error::NotPositiveSemidefinite(format!(
                        "zero pivot at {k} with coupling {off:e}"
                    )));
                }
            }
            continue;
        }
        let lkk = d.sqrt();
        l[(k, k)] = lkk;
        for r in k + 1..n {
            let off = a[(r, k)] - (0..k).map(|j| l[(r, j)] * l[(k, j)]).sum::<f64>();
            l[(r, k)] = off / lkk;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_with_pivoting() {
        // Zero leading entry forces a row swap.
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x;
        let got = solve(&a, &b).unwrap();
        assert_relative_eq!(got, x, epsilon = 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(solve(&a, &b), Err(Error::SingularSystem(_))));
        assert!(condition_number(&a).is_infinite());
    }

    #[test]
    fn identity_condition_is_one() {
        assert_eq!(condition_number(&DMatrix::identity(4, 4)), 1.0);
    }

    #[test]
    fn cholesky_of_perfect_correlation_duplicates_column() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = semidefinite_cholesky(&a, 1e-12).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert!(semidefinite_cholesky(&a, 1e-12).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.0]);
        let l = semidefinite_cholesky(&a, 1e-12).unwrap();
        assert_relative_eq!(&l * l.transpose(), a, epsilon = 1e-14);
    }
}
