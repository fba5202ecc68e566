//! Gamma-process factor model.
//!
//! Columns of the reward matrix are modelled as `m_n ~ N(0, W W^T + sigma^2 I)`
//! with nonnegative loadings `W` (D x K) and the hierarchical prior
//!
//! ```text
//! W_dk | r_k, gamma  ~ Gamma(shape = gamma * r_k, rate = gamma)
//! r_k | gamma0, c0   ~ Gamma(shape = gamma0 / K, rate = c0)
//! gamma, gamma0, c0  ~ Gamma(1, 1)
//! ```
//!
//! The factor rates `r_k` shrink unused columns of `W`, so a generous rank
//! bound `K` adapts to the rank supported by the data. `sigma` is a fixed
//! hyperparameter and is never inferred.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One scalar coordinate of the model parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Coord {
    W(usize, usize),
    R(usize),
    Gamma,
    Gamma0,
    C0,
}

/// Flat indexing of `(W, r, gamma, gamma0, c0)`: W row-major, then r, then the
/// three scalar hyperparameters. Always `D*K + K + 3` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub dim: usize,
    pub rank: usize,
}

impl ParamLayout {
    pub fn new(dim: usize, rank: usize) -> Result<Self> {
        if dim == 0 || rank == 0 {
            return Err(Error::domain(format!(
                "model dimensions must be positive, got D={dim}, K={rank}"
            )));
        }
        Ok(Self { dim, rank })
    }

    pub fn len(&self) -> usize {
        self.dim * self.rank + self.rank + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, coord: Coord) -> usize {
        let dk = self.dim * self.rank;
        match coord {
            Coord::W(d, k) => d * self.rank + k,
            Coord::R(k) => dk + k,
            Coord::Gamma => dk + self.rank,
            Coord::Gamma0 => dk + self.rank + 1,
            Coord::C0 => dk + self.rank + 2,
        }
    }

    pub fn coord(&self, index: usize) -> Coord {
        let dk = self.dim * self.rank;
        if index < dk {
            Coord::W(index / self.rank, index % self.rank)
        } else if index < dk + self.rank {
            Coord::R(index - dk)
        } else {
            match index - dk - self.rank {
                0 => Coord::Gamma,
                1 => Coord::Gamma0,
                2 => Coord::C0,
                _ => panic!("coordinate index {index} out of range for {self:?}"),
            }
        }
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.len()).map(|i| self.coord(i))
    }
}

/// One full draw of the model parameters plus the fixed noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub w: DMatrix<f64>,
    pub r: DVector<f64>,
    pub gamma: f64,
    pub gamma0: f64,
    pub c0: f64,
    pub sigma: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and > 0, got {x}"
        )))
    }
}

impl FactorParams {
    pub fn new(
        w: DMatrix<f64>,
        r: DVector<f64>,
        gamma: f64,
        gamma0: f64,
        c0: f64,
        sigma: f64,
    ) -> Result<Self> {
        ParamLayout::new(w.nrows(), w.ncols())?;
        if r.len() != w.ncols() {
            return Err(Error::domain(format!(
                "r has length {} but W has {} columns",
                r.len(),
                w.ncols()
            )));
        }
        for &x in w.iter() {
            check_positive("W entry", x)?;
        }
        for &x in r.iter() {
            check_positive("r entry", x)?;
        }
        check_positive("gamma", gamma)?;
        check_positive("gamma0", gamma0)?;
        check_positive("c0", c0)?;
        check_positive("sigma", sigma)?;
        Ok(Self {
            w,
            r,
            gamma,
            gamma0,
            c0,
            sigma,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            dim: self.w.nrows(),
            rank: self.w.ncols(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn get(&self, coord: Coord) -> f64 {
        match coord {
            Coord::W(d, k) => self.w[(d, k)],
            Coord::R(k) => self.r[k],
            Coord::Gamma => self.gamma,
            Coord::Gamma0 => self.gamma0,
            Coord::C0 => self.c0,
        }
    }

    pub fn set(&mut self, coord: Coord, value: f64) {
        match coord {
            Coord::W(d, k) => self.w[(d, k)] = value,
            Coord::R(k) => self.r[k] = value,
            Coord::Gamma => self.gamma = value,
            Coord::Gamma0 => self.gamma0 = value,
            Coord::C0 => self.c0 = value,
        }
    }

    /// Log of every coordinate, in [`ParamLayout`] order.
    pub fn to_log_vec(&self) -> Vec<f64> {
        let layout = self.layout();
        layout.coords().map(|c| self.get(c).ln()).collect()
    }

    /// Inverse of [`FactorParams::to_log_vec`].
    pub fn from_log_vec(layout: ParamLayout, u: &[f64], sigma: f64) -> Result<Self> {
        if u.len() != layout.len() {
            return Err(Error::domain(format!(
                "expected {} log-parameters, got {}",
                layout.len(),
                u.len()
            )));
        }
        let w = DMatrix::from_fn(layout.dim, layout.rank, |d, k| {
            u[layout.index(Coord::W(d, k))].exp()
        });
        let r = DVector::from_fn(layout.rank, |k, _| u[layout.index(Coord::R(k))].exp());
        FactorParams::new(
            w,
            r,
            u[layout.index(Coord::Gamma)].exp(),
            u[layout.index(Coord::Gamma0)].exp(),
            u[layout.index(Coord::C0)].exp(),
            sigma,
        )
    }

    /// `W W^T + sigma^2 I`.
    pub fn covariance(&self) -> DMatrix<f64> {
        column_covariance(&self.w, self.sigma)
    }
}

/// Observed part of one column: sorted row indices and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialColumn {
    observed_idx: Vec<usize>,
    observed_vals: Vec<f64>,
    dim: usize,
}

impl PartialColumn {
    pub fn new(observed_idx: Vec<usize>, observed_vals: Vec<f64>, dim: usize) -> Result<Self> {
        if observed_idx.len() != observed_vals.len() {
            return Err(Error::domain(format!(
                "{} observed indices but {} values",
                observed_idx.len(),
                observed_vals.len()
            )));
        }
        if observed_idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(
                "observed indices must be strictly increasing",
            ));
        }
        if let Some(&last) = observed_idx.last() {
            if last >= dim {
                return Err(Error::domain(format!(
                    "observed index {last} out of range for dimension {dim}"
                )));
            }
        }
        if let Some(v) = observed_vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("observed value {v} is not finite")));
        }
        Ok(Self {
            observed_idx,
            observed_vals,
            dim,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            observed_idx: Vec::new(),
            observed_vals: Vec::new(),
            dim,
        }
    }

    pub fn observed_idx(&self) -> &[usize] {
        &self.observed_idx
    }

    pub fn observed_vals(&self) -> &[f64] {
        &self.observed_vals
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_observed(&self) -> usize {
        self.observed_idx.len()
    }

    /// Row indices not in the observed set, increasing.
    pub fn unobserved_idx(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim - self.observed_idx.len());
        let mut it = self.observed_idx.iter().peekable();
        for i in 0..self.dim {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// Gaussian over the unobserved entries of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    /// Row indices the mean and covariance refer to.
    pub unobserved_idx: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Normalized log density of `Gamma(shape = a, rate = b)` at `x`.
pub fn gamma_log_density(x: f64, a: f64, b: f64) -> Result<f64> {
    check_positive("x", x)?;
    check_positive("shape", a)?;
    check_positive("rate", b)?;
    Ok(a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x)
}

/// `W W^T + sigma^2 I`, symmetric by construction.
pub fn column_covariance(w: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let d = w.nrows();
    let mut cov = DMatrix::zeros(d, d);
    let s2 = sigma * sigma;
    for i in 0..d {
        for j in 0..=i {
            let v = w.row(i).dot(&w.row(j));
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += s2;
    }
    cov
}

/// Conditional distribution of a column's unobserved entries given its
/// observed ones under `N(0, sigma_mat)`.
///
/// Mean `S_UO S_OO^{-1} m_O` and Schur-complement covariance
/// `S_UU - S_UO S_OO^{-1} S_OU`.
pub fn conditional_gaussian(
    sigma_mat: &DMatrix<f64>,
    col: &PartialColumn,
) -> Result<ConditionalGaussian> {
    let d = col.dim();
    if sigma_mat.nrows() != d || sigma_mat.ncols() != d {
        return Err(Error::domain(format!(
            "covariance is {}x{} but column has dimension {d}",
            sigma_mat.nrows(),
            sigma_mat.ncols()
        )));
    }
    let obs = col.observed_idx();
    let unobs = col.unobserved_idx();
    let (o, u) = (obs.len(), unobs.len());
    if o == 0 {
        return Ok(ConditionalGaussian {
            unobserved_idx: unobs,
            mean: DVector::zeros(d),
            cov: sigma_mat.clone(),
        });
    }
    if u == 0 {
        return Ok(ConditionalGaussian {
            unobserved_idx: unobs,
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        });
    }

    let mut s_oo = Vec::with_capacity(o * o);
    for &i in obs {
        for &j in obs {
            s_oo.push(sigma_mat[(i, j)]);
        }
    }
    let mut l = Vec::new();
    linalg::cholesky_jittered(&s_oo, o, &mut l)?;

    // b = L^{-1} m_O;  A[:, j] = L^{-1} S_O,u_j
    let mut b = col.observed_vals().to_vec();
    linalg::solve_lower(&l, o, &mut b);
    let mut a = vec![0.0; o * u];
    let mut tmp = vec![0.0; o];
    for (jj, &j) in unobs.iter().enumerate() {
        for (ii, &i) in obs.iter().enumerate() {
            tmp[ii] = sigma_mat[(i, j)];
        }
        linalg::solve_lower(&l, o, &mut tmp);
        for ii in 0..o {
            a[ii * u + jj] = tmp[ii];
        }
    }

    let mean = DVector::from_fn(u, |jj, _| (0..o).map(|ii| a[ii * u + jj] * b[ii]).sum());
    let mut cov = DMatrix::zeros(u, u);
    for (p, &i) in unobs.iter().enumerate() {
        for (q, &j) in unobs.iter().enumerate().take(p + 1) {
            let reduction: f64 = (0..o).map(|ii| a[ii * u + p] * a[ii * u + q]).sum();
            let v = 0.5 * (sigma_mat[(i, j)] + sigma_mat[(j, i)]) - reduction;
            cov[(p, q)] = v;
            cov[(q, p)] = v;
        }
    }
    Ok(ConditionalGaussian {
        unobserved_idx: unobs,
        mean,
        cov,
    })
}

/// Draws from `N(cg.mean, cg.cov)`.
///
/// Uses the Cholesky factor of the covariance when it exists and falls back
/// to an eigendecomposition with negative eigenvalues clipped to zero, so a
/// zero covariance returns the mean exactly. Consumes exactly `dim` normals.
pub fn sample_conditional<R: Rng + ?Sized>(cg: &ConditionalGaussian, rng: &mut R) -> DVector<f64> {
    let n = cg.mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if n == 0 {
        return z;
    }
    if let Some(chol) = cg.cov.clone().cholesky() {
        return &cg.mean + chol.l() * z;
    }
    let sym = (&cg.cov + cg.cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scaled = DVector::from_fn(n, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    &cg.mean + eig.eigenvectors * scaled
}

/// Number of factor rates with `r_k >= rel_threshold * max(r)`.
pub fn effective_rank(r: &[f64], rel_threshold: f64) -> Result<usize> {
    if r.is_empty() {
        return Err(Error::domain("effective_rank of an empty rate vector"));
    }
    if !(rel_threshold > 0.0 && rel_threshold <= 1.0) {
        return Err(Error::domain(format!(
            "relative threshold must lie in (0, 1], got {rel_threshold}"
        )));
    }
    for &x in r {
        check_positive("rate", x)?;
    }
    let max = r.iter().cloned().fold(f64::MIN, f64::max);
    // Inclusive boundary, tolerant to the rounding of `rel_threshold * max`.
    let cutoff = rel_threshold * max * (1.0 - 1e-12);
    Ok(r.iter().filter(|&&x| x >= cutoff).count())
}

/// Log prior plus Gaussian log likelihood of every column's observed entries
/// under `N(0, Sigma_OO)`.
pub fn log_joint(params: &FactorParams, columns: &[PartialColumn]) -> Result<f64> {
    let layout = params.layout();
    check_columns(layout.dim, columns)?;
    let u = params.to_log_vec();
    LogJointEval::new(layout, columns, params.sigma).eval(&u, None)
}

pub(crate) fn check_columns(dim: usize, columns: &[PartialColumn]) -> Result<()> {
    if let Some(c) = columns.iter().find(|c| c.dim() != dim) {
        return Err(Error::domain(format!(
            "column has dimension {} but the model has D={dim}",
            c.dim()
        )));
    }
    Ok(())
}

/// Columns sharing one observed row set. Their covariance block and its
/// factorization are computed once per evaluation.
struct PatternGroup {
    rows: Vec<usize>,
    /// Observed values, one column after another.
    values: Vec<f64>,
    n_cols: usize,
}

fn group_by_pattern(columns: &[PartialColumn]) -> Vec<PatternGroup> {
    let mut index: std::collections::HashMap<&[usize], usize> = Default::default();
    let mut groups: Vec<PatternGroup> = Vec::new();
    for col in columns {
        if col.n_observed() == 0 {
            continue;
        }
        let g = *index.entry(col.observed_idx()).or_insert_with(|| {
            groups.push(PatternGroup {
                rows: col.observed_idx().to_vec(),
                values: Vec::new(),
                n_cols: 0,
            });
            groups.len() - 1
        });
        groups[g].values.extend_from_slice(col.observed_vals());
        groups[g].n_cols += 1;
    }
    groups
}

/// Reusable evaluator of the log joint and its gradient with respect to the
/// log-parameters `u = log(theta)`.
///
/// The value returned is the density of `theta` (no log-Jacobian); callers
/// that work in log space add `sum(u)` themselves.
pub(crate) struct LogJointEval {
    layout: ParamLayout,
    groups: Vec<PatternGroup>,
    sigma: f64,
    w: Vec<f64>,
    s_oo: Vec<f64>,
    factor: Vec<f64>,
    alpha: Vec<f64>,
    inv: Vec<f64>,
    scratch: Vec<f64>,
    outer: Vec<f64>,
}

impl LogJointEval {
    pub(crate) fn new(layout: ParamLayout, columns: &[PartialColumn], sigma: f64) -> Self {
        Self {
            layout,
            groups: group_by_pattern(columns),
            sigma,
            w: vec![0.0; layout.dim * layout.rank],
            s_oo: Vec::new(),
            factor: Vec::new(),
            alpha: Vec::new(),
            inv: Vec::new(),
            scratch: Vec::new(),
            outer: vec![0.0; layout.dim * layout.dim],
        }
    }

    /// Log joint at `theta = exp(u)`; when `grad` is given it is overwritten
    /// with `d log_joint / d u`.
    pub(crate) fn eval(&mut self, u: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let ParamLayout { dim, rank } = self.layout;
        debug_assert_eq!(u.len(), self.layout.len());
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }

        let ig = self.layout.index(Coord::Gamma);
        let ig0 = self.layout.index(Coord::Gamma0);
        let ic0 = self.layout.index(Coord::C0);
        let (ln_gamma_p, ln_gamma0, ln_c0) = (u[ig], u[ig0], u[ic0]);
        let (gamma, gamma0, c0) = (ln_gamma_p.exp(), ln_gamma0.exp(), ln_c0.exp());
        for (i, w) in self.w.iter_mut().enumerate() {
            *w = u[i].exp();
        }

        let mut total = 0.0;
        let mut d_gamma = 0.0;
        let mut d_gamma0 = 0.0;
        let mut d_c0 = 0.0;

        // r_k ~ Gamma(gamma0 / K, c0)
        let a0 = gamma0 / rank as f64;
        let lg_a0 = ln_gamma(a0);
        let psi_a0 = if grad.is_some() { digamma(a0) } else { 0.0 };
        for k in 0..rank {
            let ir = self.layout.index(Coord::R(k));
            let ln_r = u[ir];
            let r = ln_r.exp();
            total += a0 * ln_c0 - lg_a0 + (a0 - 1.0) * ln_r - c0 * r;

            // W_dk ~ Gamma(gamma r_k, gamma)
            let a = gamma * r;
            let lg_a = ln_gamma(a);
            let mut sum_ln_w = 0.0;
            let mut sum_w = 0.0;
            for d in 0..dim {
                let ln_w = u[d * rank + k];
                let w = self.w[d * rank + k];
                total += a * ln_gamma_p - lg_a + (a - 1.0) * ln_w - gamma * w;
                sum_ln_w += ln_w;
                sum_w += w;
                if let Some(g) = grad.as_deref_mut() {
                    g[d * rank + k] += (a - 1.0) - gamma * w;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let psi_a = digamma(a);
                let n = dim as f64;
                // d/dr_k of the W block, times r_k
                let d_r = gamma * (n * (ln_gamma_p - psi_a) + sum_ln_w);
                g[ir] += r * d_r + (a0 - 1.0) - c0 * r;
                d_gamma += r * (n * (ln_gamma_p + 1.0 - psi_a) + sum_ln_w) - sum_w;
                d_gamma0 += (ln_c0 - psi_a0 + ln_r) / rank as f64;
                d_c0 += a0 / c0 - r;
            }
        }

        // gamma, gamma0, c0 ~ Gamma(1, 1)
        total -= gamma + gamma0 + c0;
        if let Some(g) = grad.as_deref_mut() {
            g[ig] += gamma * d_gamma - gamma;
            g[ig0] += gamma0 * d_gamma0 - gamma0;
            g[ic0] += c0 * d_c0 - c0;
        }

        total += self.likelihood(grad.is_some())?;

        if let Some(g) = grad {
            // dL/dW = B W where B accumulates (alpha alpha^T - S_OO^{-1}) per column.
            for d in 0..dim {
                for k in 0..rank {
                    let mut s = 0.0;
                    for e in 0..dim {
                        s += self.outer[d * dim + e] * self.w[e * rank + k];
                    }
                    g[d * rank + k] += self.w[d * rank + k] * s;
                }
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::numerical("non-finite log-joint gradient"));
            }
        }
        if !total.is_finite() {
            return Err(Error::numerical(format!("log joint evaluated to {total}")));
        }
        Ok(total)
    }

    fn likelihood(&mut self, want_grad: bool) -> Result<f64> {
        let ParamLayout { dim, rank } = self.layout;
        let s2 = self.sigma * self.sigma;
        if want_grad {
            self.outer.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut total = 0.0;
        for group in &self.groups {
            let obs = &group.rows;
            let o = obs.len();
            self.s_oo.clear();
            self.s_oo.resize(o * o, 0.0);
            for a in 0..o {
                let ra = &self.w[obs[a] * rank..obs[a] * rank + rank];
                for b in 0..=a {
                    let rb = &self.w[obs[b] * rank..obs[b] * rank + rank];
                    let v: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                    self.s_oo[a * o + b] = v;
                    self.s_oo[b * o + a] = v;
                }
                self.s_oo[a * o + a] += s2;
            }
            linalg::cholesky_jittered(&self.s_oo, o, &mut self.factor)?;
            let log_det = linalg::log_det_from_factor(&self.factor, o);
            let n_cols = group.n_cols as f64;
            total -= 0.5 * n_cols * (log_det + o as f64 * LN_2PI);

            for vals in group.values.chunks_exact(o) {
                self.alpha.clear();
                self.alpha.extend_from_slice(vals);
                linalg::solve_lower(&self.factor, o, &mut self.alpha);
                total -= 0.5 * self.alpha.iter().map(|x| x * x).sum::<f64>();
                if want_grad {
                    linalg::solve_lower_transpose(&self.factor, o, &mut self.alpha);
                    for a in 0..o {
                        let row = obs[a] * dim;
                        for b in 0..o {
                            self.outer[row + obs[b]] += self.alpha[a] * self.alpha[b];
                        }
                    }
                }
            }
            if want_grad {
                linalg::inverse_from_factor(&self.factor, o, &mut self.inv, &mut self.scratch);
                for a in 0..o {
                    let row = obs[a] * dim;
                    for b in 0..o {
                        self.outer[row + obs[b]] -= n_cols * self.inv[a * o + b];
                    }
                }
            }
        }
        Ok(total)
    }
}
