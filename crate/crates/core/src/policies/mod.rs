//! Action selection: Thompson Sampling, information-directed sampling and
//! the baseline policies.
//!
//! A matrix entry `(row, col)` is an action. Rows index the dimension `D` of
//! a column and columns are the exchangeable units of the model. Everything
//! here that breaks ties does so by the smallest `(row, col)` pair.

mod baselines;
pub(crate) mod completion;
mod ids;
mod thompson;

use std::fmt;

pub use baselines::{
    empirical_cov_select, empirical_covariance, greedy_completion_select, hard_impute,
    oracle_select, random_select, GreedyConfig,
};
pub use ids::{
    approx_info_ratio, ids_select_batch, predictive_distribution, BinGrid, BinSpec, IdsConfig,
    InfoRatioTables, ThetaSample,
};
pub use thompson::thompson_select_batch;

use crate::error::{Error, Result};
use crate::model::PartialColumn;

/// A matrix entry. Ordering is lexicographic in `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub row: usize,
    pub col: usize,
}

impl Action {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// `beta^count` with `0^0 = 1`.
pub fn discount_factor(beta: f64, count: u32) -> f64 {
    if count == 0 {
        1.0
    } else {
        beta.powi(count as i32)
    }
}

/// What the policy has seen so far: the first value recorded for each entry
/// and how many times each entry was pulled.
///
/// Entries pulled again under `beta > 0` keep their first (undiscounted)
/// value; the model conditions on it as an exact observation.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    dim: usize,
    n_cols: usize,
    beta: f64,
    values: Vec<Option<f64>>,
    pulls: Vec<u32>,
}

impl History {
    pub fn new(dim: usize, n_cols: usize, beta: f64) -> Result<Self> {
        if dim == 0 || n_cols == 0 {
            return Err(Error::domain(format!(
                "history needs a nonempty matrix, got {dim}x{n_cols}"
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::domain(format!(
                "discount must lie in [0, 1], got {beta}"
            )));
        }
        Ok(Self {
            dim,
            n_cols,
            beta,
            values: vec![None; dim * n_cols],
            pulls: vec![0; dim * n_cols],
        })
    }

    /// `(D, N)`: rows and columns.
    pub fn dims(&self) -> (usize, usize) {
        (self.dim, self.n_cols)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn slot(&self, a: Action) -> Result<usize> {
        if a.row >= self.dim || a.col >= self.n_cols {
            return Err(Error::domain(format!(
                "action {a} outside a {}x{} matrix",
                self.dim, self.n_cols
            )));
        }
        Ok(a.col * self.dim + a.row)
    }

    /// Records a pull. The first value seen for an entry is kept.
    pub fn record(&mut self, a: Action, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::domain(format!(
                "non-finite observation {value} at {a}"
            )));
        }
        let s = self.slot(a)?;
        if self.values[s].is_none() {
            self.values[s] = Some(value);
        }
        self.pulls[s] += 1;
        Ok(())
    }

    /// Counts a pull without a value, used for picks queued inside a batch.
    pub(crate) fn mark_pending(&mut self, a: Action) {
        let s = a.col * self.dim + a.row;
        self.pulls[s] += 1;
    }

    pub(crate) fn value_at(&self, row: usize, col: usize) -> Option<f64> {
        self.values[col * self.dim + row]
    }

    pub fn value(&self, a: Action) -> Option<f64> {
        self.slot(a).ok().and_then(|s| self.values[s])
    }

    pub fn pull_count(&self, a: Action) -> u32 {
        self.slot(a).map(|s| self.pulls[s]).unwrap_or(0)
    }

    /// Discount applied to the next pull of `a`.
    pub fn discount(&self, a: Action) -> f64 {
        discount_factor(self.beta, self.pull_count(a))
    }

    /// With `beta = 0` an entry can be played once; otherwise always.
    pub fn is_available(&self, a: Action) -> bool {
        match self.slot(a) {
            Ok(s) => self.beta > 0.0 || self.pulls[s] == 0,
            Err(_) => false,
        }
    }

    /// Available actions in lexicographic order.
    pub fn available_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        for row in 0..self.dim {
            for col in 0..self.n_cols {
                let a = Action::new(row, col);
                if self.beta > 0.0 || self.pulls[col * self.dim + row] == 0 {
                    out.push(a);
                }
            }
        }
        out
    }

    pub fn n_available(&self) -> usize {
        if self.beta > 0.0 {
            self.dim * self.n_cols
        } else {
            self.pulls.iter().filter(|&&c| c == 0).count()
        }
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Observed entries in lexicographic order.
    pub fn observed(&self) -> Vec<(Action, f64)> {
        let mut out = Vec::new();
        for row in 0..self.dim {
            for col in 0..self.n_cols {
                if let Some(v) = self.values[col * self.dim + row] {
                    out.push((Action::new(row, col), v));
                }
            }
        }
        out
    }

    pub fn column(&self, col: usize) -> Result<PartialColumn> {
        if col >= self.n_cols {
            return Err(Error::domain(format!("column {col} out of range")));
        }
        let (mut idx, mut vals) = (Vec::new(), Vec::new());
        for row in 0..self.dim {
            if let Some(v) = self.value_at(row, col) {
                idx.push(row);
                vals.push(v);
            }
        }
        PartialColumn::new(idx, vals, self.dim)
    }

    pub fn columns(&self) -> Result<Vec<PartialColumn>> {
        (0..self.n_cols).map(|j| self.column(j)).collect()
    }

    pub(crate) fn ensure_available(&self, needed: usize) -> Result<()> {
        if needed == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        let available = self.n_available();
        if available < needed {
            return Err(Error::InsufficientActions { needed, available });
        }
        Ok(())
    }
}

/// Highest discounted score over available actions; ties go to the smallest
/// action. `scores` is column-major `dim * n_cols`.
pub(crate) fn argmax_discounted(history: &History, scores: &[f64]) -> Result<Action> {
    let (dim, n_cols) = history.dims();
    let mut best: Option<(Action, f64)> = None;
    for row in 0..dim {
        for col in 0..n_cols {
            let a = Action::new(row, col);
            if !history.is_available(a) {
                continue;
            }
            let v = scores[col * dim + row] * history.discount(a);
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
    }
    best.map(|(a, _)| a)
        .ok_or_else(|| Error::numerical("no available action has a finite score"))
}
