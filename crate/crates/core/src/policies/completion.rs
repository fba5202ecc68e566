//! Column-wise Gaussian completion of the reward matrix.
//!
//! Joint draws use the conditioning-by-correction trick: draw an unconditional
//! `x ~ N(0, S)` from the full factor of `S`, then set
//! `m_U = x_U + S_UO S_OO^{-1} (m_O - x_O)`. This has the same law as drawing
//! from the conditional Gaussian directly but needs only one `D x D` factor
//! per covariance, shared by every column.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::policies::History;

/// Dense covariance over the rows of a column plus its lower Cholesky factor.
pub(crate) struct ColumnCovariance {
    dim: usize,
    cov: Vec<f64>,
    chol: Vec<f64>,
}

impl ColumnCovariance {
    pub(crate) fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if cov.ncols() != dim {
            return Err(Error::domain("covariance must be square"));
        }
        let cov = linalg::row_major(cov);
        let mut chol = Vec::new();
        linalg::cholesky_jittered(&cov, dim, &mut chol)?;
        Ok(Self { dim, cov, chol })
    }

    fn observed_block(&self, obs: &[usize], buf: &mut Vec<f64>) {
        let o = obs.len();
        buf.clear();
        buf.resize(o * o, 0.0);
        for (a, &i) in obs.iter().enumerate() {
            for (b, &j) in obs.iter().enumerate() {
                buf[a * o + b] = self.cov[i * self.dim + j];
            }
        }
    }

    /// One draw of the full matrix (column-major, `dim * n_cols`) with
    /// observed entries fixed at their values. Consumes `dim` normals per column.
    pub(crate) fn sample_matrix<R: Rng + ?Sized>(
        &self,
        history: &History,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (dim, n_cols) = history.dims();
        if dim != self.dim {
            return Err(Error::domain(format!(
                "covariance has dimension {} but history has {dim} rows",
                self.dim
            )));
        }
        let mut out = vec![0.0; dim * n_cols];
        let mut z = vec![0.0; dim];
        let (mut block, mut factor, mut resid) = (Vec::new(), Vec::new(), Vec::new());
        let mut obs = Vec::with_capacity(dim);
        for j in 0..n_cols {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x = &mut out[j * dim..(j + 1) * dim];
            for i in 0..dim {
                x[i] = (0..=i).map(|k| self.chol[i * dim + k] * z[k]).sum();
            }
            obs.clear();
            resid.clear();
            for i in 0..dim {
                if let Some(v) = history.value_at(i, j) {
                    obs.push(i);
                    resid.push(v - x[i]);
                }
            }
            if obs.is_empty() {
                continue;
            }
            let o = obs.len();
            self.observed_block(&obs, &mut block);
            linalg::cholesky_jittered(&block, o, &mut factor)?;
            linalg::solve_lower(&factor, o, &mut resid);
            linalg::solve_lower_transpose(&factor, o, &mut resid);
            for i in 0..dim {
                let row = &self.cov[i * dim..(i + 1) * dim];
                let corr: f64 = obs.iter().zip(&resid).map(|(&k, r)| row[k] * r).sum();
                x[i] += corr;
            }
            for &i in &obs {
                if let Some(v) = history.value_at(i, j) {
                    x[i] = v;
                }
            }
        }
        Ok(out)
    }

    /// Conditional mean and variance of every entry (column-major). Observed
    /// entries get their value and zero variance.
    pub(crate) fn predictive_moments(&self, history: &History) -> Result<(Vec<f64>, Vec<f64>)> {
        let (dim, n_cols) = history.dims();
        if dim != self.dim {
            return Err(Error::domain(format!(
                "covariance has dimension {} but history has {dim} rows",
                self.dim
            )));
        }
        let mut mean = vec![0.0; dim * n_cols];
        let mut var = vec![0.0; dim * n_cols];
        let (mut block, mut factor, mut b, mut v) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut obs = Vec::with_capacity(dim);
        for j in 0..n_cols {
            obs.clear();
            b.clear();
            for i in 0..dim {
                if let Some(x) = history.value_at(i, j) {
                    obs.push(i);
                    b.push(x);
                }
            }
            let o = obs.len();
            if o > 0 {
                self.observed_block(&obs, &mut block);
                linalg::cholesky_jittered(&block, o, &mut factor)?;
                linalg::solve_lower(&factor, o, &mut b);
            }
            for i in 0..dim {
                let at = j * dim + i;
                if let Some(x) = history.value_at(i, j) {
                    mean[at] = x;
                    var[at] = 0.0;
                    continue;
                }
                let s_ii = self.cov[i * dim + i];
                if o == 0 {
                    var[at] = s_ii;
                    continue;
                }
                v.clear();
                v.extend(obs.iter().map(|&k| self.cov[k * dim + i]));
                linalg::solve_lower(&factor, o, &mut v);
                mean[at] = v.iter().zip(&b).map(|(p, q)| p * q).sum();
                var[at] = (s_ii - v.iter().map(|p| p * p).sum::<f64>()).max(0.0);
            }
        }
        Ok((mean, var))
    }
}
