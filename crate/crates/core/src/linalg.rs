//! Small dense helpers: symmetric eigenvalue bound and Cholesky solves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration. Returns zero for the zero matrix.
pub fn lambda_max<T: Real>(sym: ArrayView2<T>) -> T {
    let n = sym.nrows();
    if n == 0 {
        return T::zero();
    }
    // deterministic, non-degenerate start
    let mut v = Array1::from_iter((0..n).map(|i| T::one() + T::lit(0.1) * T::from_count(i % 7)));
    let mut estimate = T::zero();
    for _ in 0..1000 {
        let w = sym.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        let next = v.dot(&w) / v.dot(&v);
        v = w / norm;
        if (next - estimate).abs() <= T::lit(1e-12) * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // Rayleigh quotients approach from below; pad slightly so 1/L steps stay safe.
    estimate * (T::one() + T::lit(1e-9))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!("cholesky of a {}x{} matrix", n, a.ncols())));
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= T::zero() || !d.is_finite() {
            return Err(Error::Numerical("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = rhs` given the lower factor `L`.
pub fn cholesky_solve<T: Real>(l: ArrayView2<T>, rhs: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = rhs.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

pub fn norm<T: Real>(v: ArrayView1<T>) -> T {
    v.dot(&v).sqrt()
}

pub fn norm_sq<T: Real>(v: ArrayView1<T>) -> T {
    v.dot(&v)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    #[test]
    fn power_iteration_on_diagonal() {
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(lambda_max(a.view()), 3.0, epsilon = 1e-8);
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(lambda_max(z.view()), 0.0);
    }

    #[test]
    fn power_iteration_on_dense_spd() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        assert_abs_diff_eq!(lambda_max(a.view()), 3.0, epsilon = 1e-8);
    }

    #[test]
    fn cholesky_round_trip() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let rhs = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(l.view(), rhs.view());
        let r = a.dot(&x) - &rhs;
        assert!(norm(r.view()) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }
}
