//! Baselines that do not fit the factor model.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::policies::completion::ColumnCovariance;
use crate::policies::{argmax_discounted, Action, History};

const RIDGE_FRACTION: f64 = 0.1;

/// Thompson-style pick with a known covariance.
pub fn oracle_select<R: Rng + ?Sized>(
    true_cov: &DMatrix<f64>,
    history: &History,
    rng: &mut R,
) -> Result<Action> {
    history.ensure_available(1)?;
    let cov = ColumnCovariance::new(true_cov)?;
    let draw = cov.sample_matrix(history, rng)?;
    argmax_discounted(history, &draw)
}

/// Uniform pick over available actions.
pub fn random_select<R: Rng + ?Sized>(history: &History, rng: &mut R) -> Result<Action> {
    history.ensure_available(1)?;
    let avail = history.available_actions();
    Ok(*avail.choose(rng).expect("availability checked"))
}

/// Row second-moment matrix from pairwise-complete observations:
/// entry `(i, k)` averages `m_i m_k` over the columns where both are
/// observed, or is 0 when fewer than two such columns exist. The model has
/// zero-mean columns, so moments are not centered.
///
/// Returns `None` when no row has two observations.
pub fn empirical_covariance(history: &History) -> Option<DMatrix<f64>> {
    let (dim, n_cols) = history.dims();
    let mut sum = DMatrix::<f64>::zeros(dim, dim);
    let mut count = DMatrix::<u32>::zeros(dim, dim);
    let mut obs = Vec::with_capacity(dim);
    for j in 0..n_cols {
        obs.clear();
        obs.extend((0..dim).filter_map(|i| history.value_at(i, j).map(|v| (i, v))));
        for &(i, vi) in &obs {
            for &(k, vk) in &obs {
                sum[(i, k)] += vi * vk;
                count[(i, k)] += 1;
            }
        }
    }
    if (0..dim).all(|i| count[(i, i)] < 2) {
        return None;
    }
    Some(DMatrix::from_fn(dim, dim, |i, k| {
        let c = count[(i, k)];
        if c >= 2 {
            sum[(i, k)] / c as f64
        } else {
            0.0
        }
    }))
}

/// Ridge-regularized empirical covariance, repaired by eigenvalue clipping
/// if still indefinite.
fn regularized_empirical(history: &History) -> Option<DMatrix<f64>> {
    let mut s = empirical_covariance(history)?;
    let dim = s.nrows();
    let mean_diag = s.diagonal().mean();
    if !(mean_diag > 0.0) {
        return None;
    }
    let ridge = RIDGE_FRACTION * mean_diag;
    for i in 0..dim {
        s[(i, i)] += ridge;
    }
    let mut factor = Vec::new();
    if linalg::cholesky_jittered(&linalg::row_major(&s), dim, &mut factor).is_ok() {
        return Some(s);
    }
    let eig = SymmetricEigen::new(s);
    let floor = 1e-3 * ridge;
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// Thompson-style pick using the empirical covariance; uniform random when
/// there is not yet enough data to estimate it.
pub fn empirical_cov_select<R: Rng + ?Sized>(history: &History, rng: &mut R) -> Result<Action> {
    history.ensure_available(1)?;
    match regularized_empirical(history) {
        Some(cov) => oracle_select(&cov, history, rng),
        None => random_select(history, rng),
    }
}

/// Stopping rule for hard imputation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_iters: 100,
        }
    }
}

/// Rank-`rank` hard imputation: missing entries start at the observed mean
/// and are overwritten by the truncated SVD reconstruction until the
/// relative change falls below `rel_tol`.
pub fn hard_impute(history: &History, rank: usize, config: &GreedyConfig) -> Result<DMatrix<f64>> {
    if rank == 0 {
        return Err(Error::domain("imputation rank must be positive"));
    }
    let (dim, n_cols) = history.dims();
    let observed = history.observed();
    let fill = if observed.is_empty() {
        0.0
    } else {
        observed.iter().map(|(_, v)| v).sum::<f64>() / observed.len() as f64
    };
    let mut x = DMatrix::from_fn(dim, n_cols, |i, j| history.value_at(i, j).unwrap_or(fill));
    let rank = rank.min(dim.min(n_cols));
    for _ in 0..config.max_iters {
        let svd = x.clone().svd(true, true);
        let u = svd
            .u
            .as_ref()
            .ok_or_else(|| Error::numerical("SVD returned no U"))?;
        let vt = svd
            .v_t
            .as_ref()
            .ok_or_else(|| Error::numerical("SVD returned no V"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });
        let mut low = DMatrix::<f64>::zeros(dim, n_cols);
        for &k in order.iter().take(rank) {
            low += svd.singular_values[k] * u.column(k) * vt.row(k);
        }
        let mut change = 0.0;
        for j in 0..n_cols {
            for i in 0..dim {
                if history.value_at(i, j).is_none() {
                    let d = low[(i, j)] - x[(i, j)];
                    change += d * d;
                    x[(i, j)] = low[(i, j)];
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("hard imputation diverged"));
        }
        let norm = x.norm();
        if change.sqrt() <= config.rel_tol * norm.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(x)
}

/// Greedy pick of the best imputed entry.
pub fn greedy_completion_select(
    history: &History,
    rank: usize,
    config: &GreedyConfig,
) -> Result<Action> {
    history.ensure_available(1)?;
    let x = hard_impute(history, rank, config)?;
    argmax_discounted(history, x.as_slice())
}
