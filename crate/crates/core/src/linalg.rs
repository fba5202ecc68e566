//! Small dense kernels on row-major buffers.
//!
//! The inference loops factor thousands of tiny covariance blocks per second,
//! so these routines work in caller-owned buffers instead of allocating
//! `nalgebra` matrices. Every positive-definite factorization goes through
//! [`cholesky_jittered`]: plain attempt first, then a diagonal jitter of
//! `1e-10 * mean(diag)` escalated by a factor of ten up to `1e-4 * mean(diag)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// In-place lower Cholesky factor of a row-major `n x n` matrix.
///
/// Only the lower triangle is read; the strict upper triangle is zeroed.
/// Returns `false` if a pivot is not strictly positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert!(a.len() >= n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Factors `a` into `out` with jitter escalation. Returns the jitter that was added.
pub(crate) fn cholesky_jittered(a: &[f64], n: usize, out: &mut Vec<f64>) -> Result<f64> {
    out.clear();
    out.extend_from_slice(&a[..n * n]);
    if n == 0 || cholesky_in_place(out, n) {
        return Ok(0.0);
    }
    let mean_diag = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64;
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() {
        mean_diag
    } else {
        1.0
    };
    let mut level = JITTER_START;
    while level <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = level * scale;
        out.clear();
        out.extend_from_slice(&a[..n * n]);
        for i in 0..n {
            out[i * n + i] += jitter;
        }
        if cholesky_in_place(out, n) {
            return Ok(jitter);
        }
        level *= 10.0;
    }
    Err(Error::numerical(format!(
        "Cholesky of {n}x{n} block failed after jitter escalation to {JITTER_MAX:e} * mean(diag)"
    )))
}

/// Solves `L x = b` in place.
pub(crate) fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
pub(crate) fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `log det(A)` from the lower factor of `A`.
pub(crate) fn log_det_from_factor(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// Writes `A^{-1}` (row-major, full) given the lower factor of `A`.
pub(crate) fn inverse_from_factor(l: &[f64], n: usize, inv: &mut Vec<f64>, col: &mut Vec<f64>) {
    inv.clear();
    inv.resize(n * n, 0.0);
    col.clear();
    col.resize(n, 0.0);
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        solve_lower(l, n, col);
        solve_lower_transpose(l, n, col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
}

/// Lower Cholesky factor of a dense symmetric matrix with jitter escalation.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain(format!(
            "Cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let buf = row_major(a);
    let mut out = Vec::new();
    cholesky_jittered(&buf, n, &mut out)?;
    Ok(DMatrix::from_row_slice(n, n, &out))
}

pub(crate) fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    let mut buf = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            buf.push(a[(i, j)]);
        }
    }
    buf
}
