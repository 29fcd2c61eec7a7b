//! Dense linear-algebra helpers shared by the solvers.
//!
//! Data lives in `ndarray` containers; factorizations go through `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};

pub fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Copy into column-major (Fortran) order so that columns are contiguous.
pub fn to_col_major(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(a.raw_dim().f());
    out.assign(&a);
    out
}

pub fn column_means(a: ArrayView2<f64>) -> Array1<f64> {
    let n = a.nrows() as f64;
    a.sum_axis(ndarray::Axis(0)) / n
}

pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

pub fn frobenius_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Largest eigenvalue of `XᵀX` by power iteration, inflated by 1% so it can
/// serve as a safe Lipschitz bound.
pub fn max_eig_gram(x: ArrayView2<f64>) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start vector.
    let mut v = Array1::from_shape_fn(p, |j| 1.0 + ((j * 7919) % 13) as f64 / 13.0);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let xv = x.dot(&v);
        let w = x.t().dot(&xv);
        let next = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - estimate).abs() <= 1e-12 * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate * 1.01
}

/// Minimum-norm least-squares solution of `A W = B` via SVD.
///
/// Returns the solution and the numerical rank of `A`.
pub fn min_norm_lstsq(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(Array2<f64>, usize)> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims(format!(
            "least squares: {} rows in design, {} in target",
            a.nrows(),
            b.nrows()
        )));
    }
    let am = to_dmatrix(a);
    let bm = to_dmatrix(b);
    let svd = am.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-10 * (a.nrows().max(a.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let sol = svd
        .solve(&bm, eps)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok((from_dmatrix(&sol), rank))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_symmetric(a: ArrayView2<f64>) -> f64 {
    let eig = to_dmatrix(a).symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor, or `None` when the matrix is not positive definite.
pub fn cholesky_lower(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let chol = to_dmatrix(a).cholesky()?;
    Some(from_dmatrix(&chol.l()))
}
