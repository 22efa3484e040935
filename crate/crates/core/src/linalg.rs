//! Small dense linear-algebra helpers.
//!
//! The solvers here are deliberately hand-rolled rather than BLAS-backed:
//! every system this crate solves is a ridge-regularized Gram matrix (small,
//! symmetric positive definite), and a fixed-order Cholesky keeps results
//! bit-identical across machines.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Cholesky factor L (lower triangular) of a symmetric positive definite
/// matrix. Fails if a pivot is not strictly positive.
pub fn cholesky(a: ArrayView2<'_, f64>, context: &str) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            context: format!("cholesky ({context})"),
            expected: n,
            got: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::SingularSystem {
                context: context.to_string(),
            });
        }
        let diag = diag.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / diag;
        }
    }
    Ok(l)
}

/// Solve `A X = B` for symmetric positive definite `A` via Cholesky,
/// column by column of `B`.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, context: &str) -> Result<Array2<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension {
            context: format!("solve_spd ({context})"),
            expected: n,
            got: b.nrows(),
        });
    }
    let l = cholesky(a, context)?;
    let mut x = Array2::<f64>::zeros(b.raw_dim());
    let mut y = Array1::<f64>::zeros(n);
    for col in 0..b.ncols() {
        // forward substitution: L y = b
        for i in 0..n {
            let mut v = b[(i, col)];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        // back substitution: L^T x = y
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    Ok(x)
}

/// Largest-eigenvalue estimate for a symmetric positive semidefinite matrix
/// by fixed-iteration power method from a deterministic start vector.
pub fn spectral_bound(a: ArrayView2<'_, f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return lambda;
        }
        v = w / norm;
        lambda = v.dot(&a.dot(&v));
    }
    lambda
}

/// Outer product `x y^T` as a fresh matrix.
pub fn outer(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Array2<f64> {
    let xs = x.insert_axis(ndarray::Axis(1));
    let ys = y.insert_axis(ndarray::Axis(0));
    &xs * &ys
}

pub fn all_finite(a: ArrayView2<'_, f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solves_spd_system_exactly() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let x_true = array![[1.0, -2.0], [0.5, 3.0], [-1.5, 0.25]];
        let b = a.dot(&x_true);
        let x = solve_spd(a.view(), b.view(), "test").unwrap();
        for (got, want) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let b = array![[1.0], [1.0]];
        assert!(matches!(
            solve_spd(a.view(), b.view(), "test"),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn rejects_singular_matrix() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![[1.0], [1.0]];
        assert!(matches!(
            solve_spd(a.view(), b.view(), "test"),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn spectral_bound_matches_known_eigenvalue() {
        let a = array![[2.0, 0.0], [0.0, 5.0]];
        let lambda = spectral_bound(a.view(), 100);
        assert_abs_diff_eq!(lambda, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn outer_product_shape_and_values() {
        let g = outer(array![1.0, 2.0].view(), array![3.0, 4.0, 5.0].view());
        assert_eq!(g, array![[3.0, 4.0, 5.0], [6.0, 8.0, 10.0]]);
    }
}
