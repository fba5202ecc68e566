//! Information-directed sampling on discretized posterior predictives.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::policies::completion::ColumnCovariance;
use crate::policies::{Action, History};

/// Equal-width bins on `[lo, hi]`. Mass below `lo` or above `hi` is folded
/// into the first or last bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    lo: f64,
    hi: f64,
    n_bins: usize,
}

impl BinGrid {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::domain(format!("need at least 2 bins, got {n_bins}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!(
                "bin range [{lo}, {hi}] is empty or non-finite"
            )));
        }
        Ok(Self { lo, hi, n_bins })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    /// Inner edges, `n_bins - 1` of them.
    fn inner_edge(&self, b: usize) -> f64 {
        self.lo + b as f64 * self.width()
    }

    pub fn center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.width()
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let b = ((x - self.lo) / self.width()).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.n_bins - 1)
        }
    }

    /// Probability mass of `N(mean, sd^2)` in each bin, tails folded in.
    pub fn masses(&self, mean: f64, sd: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_bins);
        out.iter_mut().for_each(|m| *m = 0.0);
        if !(sd > 0.0) {
            out[self.bin_of(mean)] = 1.0;
            return;
        }
        let cdf = |x: f64| 0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2));
        let mut prev = 0.0;
        for (b, m) in out.iter_mut().enumerate().take(self.n_bins - 1) {
            let c = cdf(self.inner_edge(b + 1));
            *m = (c - prev).max(0.0);
            prev = c;
        }
        out[self.n_bins - 1] = (1.0 - prev).max(0.0);
    }
}

/// How `approx_info_ratio` chooses its bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinSpec {
    /// The same grid for every action.
    Fixed(BinGrid),
    /// Per action: the posterior-predictive mixture mean plus or minus
    /// `n_std` mixture standard deviations, split into `n_bins`.
    Adaptive { n_bins: usize, n_std: f64 },
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Adaptive {
            n_bins: 32,
            n_std: 6.0,
        }
    }
}

impl BinSpec {
    fn grid_for(&self, weights: &[f64], means: &[f64], vars: &[f64]) -> Result<BinGrid> {
        match *self {
            BinSpec::Fixed(g) => Ok(g),
            BinSpec::Adaptive { n_bins, n_std } => {
                let m: f64 = weights.iter().zip(means).map(|(p, x)| p * x).sum();
                let v: f64 = weights
                    .iter()
                    .zip(means.iter().zip(vars))
                    .map(|(p, (x, s2))| p * (s2 + (x - m) * (x - m)))
                    .sum();
                let half = n_std * v.max(0.0).sqrt();
                let half = if half > 1e-9 * m.abs().max(1.0) {
                    half
                } else {
                    1e-9 * m.abs().max(1.0)
                };
                BinGrid::new(m - half, m + half, n_bins)
            }
        }
    }
}

/// A posterior draw of the column covariance with its mixture weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSample {
    pub cov: DMatrix<f64>,
    pub weight: f64,
}

/// Settings for the IDS policy.
#[derive(Debug, Clone, PartialEq)]
pub struct IdsConfig {
    /// Posterior covariance draws per refit.
    pub n_theta: usize,
    pub bins: BinSpec,
    /// Evaluate only the top-`C` actions by expected discounted reward.
    pub candidates: Option<usize>,
}

impl Default for IdsConfig {
    fn default() -> Self {
        Self {
            n_theta: 64,
            bins: BinSpec::default(),
            candidates: Some(512),
        }
    }
}

/// Expected regret and information gain per candidate action.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoRatioTables {
    actions: Vec<Action>,
    regret: Vec<f64>,
    info: Vec<f64>,
    expected_reward: Vec<f64>,
    r_star: f64,
    p_star: Vec<(Action, f64)>,
}

impl InfoRatioTables {
    /// Tables from explicit values. `expected_reward` is undiscounted and is
    /// only used when a batch pulls an action more than once.
    pub fn new(
        actions: Vec<Action>,
        regret: Vec<f64>,
        info: Vec<f64>,
        expected_reward: Vec<f64>,
        r_star: f64,
    ) -> Result<Self> {
        let n = actions.len();
        if regret.len() != n || info.len() != n || expected_reward.len() != n {
            return Err(Error::domain("table columns have different lengths"));
        }
        if actions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("table actions must be distinct and sorted"));
        }
        if regret
            .iter()
            .chain(&info)
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::domain(
                "regret and info must be finite and nonnegative",
            ));
        }
        Ok(Self {
            actions,
            regret,
            info,
            expected_reward,
            r_star,
            p_star: Vec::new(),
        })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn regret_values(&self) -> &[f64] {
        &self.regret
    }

    pub fn info_values(&self) -> &[f64] {
        &self.info
    }

    pub fn expected_rewards(&self) -> &[f64] {
        &self.expected_reward
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    /// Posterior probability of each action being optimal (nonzero entries only).
    pub fn p_star(&self) -> &[(Action, f64)] {
        &self.p_star
    }

    fn position(&self, a: Action) -> Option<usize> {
        self.actions.binary_search(&a).ok()
    }

    pub fn regret(&self, a: Action) -> Option<f64> {
        self.position(a).map(|i| self.regret[i])
    }

    pub fn info(&self, a: Action) -> Option<f64> {
        self.position(a).map(|i| self.info[i])
    }
}

fn check_weights(samples: &[ThetaSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::domain("need at least one posterior sample"));
    }
    if samples
        .iter()
        .any(|s| !(s.weight >= 0.0) || !s.weight.is_finite())
    {
        return Err(Error::domain(
            "sample weights must be finite and nonnegative",
        ));
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "sample weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Discretized predictive of one entry under covariance `theta`, given the
/// column's observed entries.
pub fn predictive_distribution(
    theta: &DMatrix<f64>,
    history: &History,
    action: Action,
    bins: &BinGrid,
) -> Result<Vec<f64>> {
    if !history.is_available(action) {
        return Err(Error::domain(format!("action {action} is not available")));
    }
    let (dim, _) = history.dims();
    let (mean, var) = ColumnCovariance::new(theta)?.predictive_moments(history)?;
    let at = action.col * dim + action.row;
    let mut out = vec![0.0; bins.n_bins()];
    bins.masses(mean[at], var[at].sqrt(), &mut out);
    Ok(out)
}

/// Regret and information tables over the available actions (or the top
/// `candidates` of them by expected discounted reward).
///
/// The optimal action of each sample is the argmax of its discretized
/// discounted expected reward. `info` is the mutual information between the
/// optimal action and the binned outcome of each action.
pub fn approx_info_ratio(
    samples: &[ThetaSample],
    history: &History,
    bins: &BinSpec,
    candidates: Option<usize>,
) -> Result<InfoRatioTables> {
    check_weights(samples)?;
    let (dim, _) = history.dims();
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let moments: Vec<(Vec<f64>, Vec<f64>)> = samples
        .iter()
        .map(|s| ColumnCovariance::new(&s.cov)?.predictive_moments(history))
        .collect::<Result<_>>()?;

    let mut actions = history.available_actions();
    if actions.is_empty() {
        return Err(Error::InsufficientActions {
            needed: 1,
            available: 0,
        });
    }
    if let Some(c) = candidates {
        if c == 0 {
            return Err(Error::domain("candidate count must be positive"));
        }
        if c < actions.len() {
            let score = |a: &Action| {
                let at = a.col * dim + a.row;
                let m: f64 = weights
                    .iter()
                    .zip(&moments)
                    .map(|(p, (mu, _))| p * mu[at])
                    .sum();
                m * history.discount(*a)
            };
            let mut scored: Vec<(f64, Action)> = actions.iter().map(|a| (score(a), *a)).collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            actions = scored.into_iter().take(c).map(|(_, a)| a).collect();
            actions.sort();
        }
    }

    let (n_s, n_a) = (samples.len(), actions.len());
    let mut grids = Vec::with_capacity(n_a);
    let mut q = Vec::with_capacity(n_a);
    let mut value = vec![0.0; n_s * n_a];
    let mut expected_reward = vec![0.0; n_a];
    for (ai, a) in actions.iter().enumerate() {
        let at = a.col * dim + a.row;
        let means: Vec<f64> = moments.iter().map(|(mu, _)| mu[at]).collect();
        let vars: Vec<f64> = moments.iter().map(|(_, v)| v[at]).collect();
        let grid = bins.grid_for(&weights, &means, &vars)?;
        let nb = grid.n_bins();
        let mut qa = vec![0.0; n_s * nb];
        let disc = history.discount(*a);
        for s in 0..n_s {
            let row = &mut qa[s * nb..(s + 1) * nb];
            grid.masses(means[s], vars[s].sqrt(), row);
            let ev: f64 = row
                .iter()
                .enumerate()
                .map(|(b, m)| m * grid.center(b))
                .sum();
            value[s * n_a + ai] = ev * disc;
            expected_reward[ai] += weights[s] * ev;
        }
        grids.push(grid);
        q.push(qa);
    }

    let mut best = vec![0usize; n_s];
    let mut r_star = 0.0;
    for s in 0..n_s {
        let vals = &value[s * n_a..(s + 1) * n_a];
        let mut b = 0;
        for (ai, v) in vals.iter().enumerate() {
            if *v > vals[b] {
                b = ai;
            }
        }
        best[s] = b;
        r_star += weights[s] * vals[b];
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, b) in best.iter().enumerate() {
        groups.entry(*b).or_default().push(s);
    }
    let p_star: Vec<(usize, f64)> = groups
        .iter()
        .map(|(b, members)| (*b, members.iter().map(|&s| weights[s]).sum()))
        .collect();

    let mut regret = vec![0.0; n_a];
    let mut info = vec![0.0; n_a];
    for ai in 0..n_a {
        let expected: f64 = (0..n_s).map(|s| weights[s] * value[s * n_a + ai]).sum();
        let gap = r_star - expected;
        if gap < -1e-9 * r_star.abs().max(1.0) {
            return Err(Error::numerical(format!("negative expected regret {gap}")));
        }
        regret[ai] = gap.max(0.0);

        let nb = grids[ai].n_bins();
        let qa = &q[ai];
        let mut p_y = vec![0.0; nb];
        for s in 0..n_s {
            for b in 0..nb {
                p_y[b] += weights[s] * qa[s * nb + b];
            }
        }
        let mut g = 0.0;
        for ((_, members), (_, p_opt)) in groups.iter().zip(&p_star) {
            for b in 0..nb {
                let joint: f64 = members.iter().map(|&s| weights[s] * qa[s * nb + b]).sum();
                if joint > 0.0 {
                    g += joint * (joint / (p_opt * p_y[b])).ln();
                }
            }
        }
        if g < -1e-9 {
            return Err(Error::numerical(format!("negative mutual information {g}")));
        }
        info[ai] = g.max(0.0);
    }

    Ok(InfoRatioTables {
        p_star: p_star.iter().map(|&(b, p)| (actions[b], p)).collect(),
        actions,
        regret,
        info,
        expected_reward,
        r_star,
    })
}

fn ratio(regret: f64, info: f64) -> f64 {
    if regret == 0.0 {
        0.0
    } else if info > 0.0 {
        regret * regret / info
    } else {
        f64::INFINITY
    }
}

/// IDS batch: repeatedly take the tabulated action with the smallest
/// information ratio. After each pick only that action's regret is updated
/// for its new discount; information is not recomputed within the batch.
/// If every ratio is infinite the smallest regret wins.
pub fn ids_select_batch(
    tables: &InfoRatioTables,
    history: &History,
    n_obs: usize,
) -> Result<Vec<Action>> {
    let mut local = history.clone();
    let usable = tables
        .actions
        .iter()
        .filter(|a| local.is_available(**a))
        .count();
    if n_obs == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    if usable < n_obs && history.beta() == 0.0 {
        return Err(Error::InsufficientActions {
            needed: n_obs,
            available: usable,
        });
    }
    if usable == 0 {
        return Err(Error::InsufficientActions {
            needed: n_obs,
            available: 0,
        });
    }
    let mut regret = tables.regret.clone();
    let mut picks = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let mut best: Option<(usize, f64)> = None;
        let mut fallback: Option<(usize, f64)> = None;
        for (i, a) in tables.actions.iter().enumerate() {
            if !local.is_available(*a) {
                continue;
            }
            let r = ratio(regret[i], tables.info[i]);
            if r.is_finite() && best.is_none_or(|(_, b)| r < b) {
                best = Some((i, r));
            }
            if fallback.is_none_or(|(_, b)| regret[i] < b) {
                fallback = Some((i, regret[i]));
            }
        }
        let (i, _) = best.or(fallback).ok_or(Error::InsufficientActions {
            needed: n_obs,
            available: picks.len(),
        })?;
        let a = tables.actions[i];
        local.mark_pending(a);
        picks.push(a);
        if local.is_available(a) {
            regret[i] = (tables.r_star - tables.expected_reward[i] * local.discount(a)).max(0.0);
        }
    }
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn revealing_toy(eps: f64) -> (Vec<ThetaSample>, History) {
        // Row 0 observed at 1.0; rows 1 and 2 are nearly determined by it,
        // with opposite signs under the two samples.
        let make = |s: f64| {
            let v = [1.0, 0.9 * s, -0.9 * s];
            let mut c = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    c[(i, j)] = v[i] * v[j];
                }
            }
            c[(1, 1)] += eps;
            c[(2, 2)] += eps;
            c
        };
        let samples = vec![
            ThetaSample {
                cov: make(1.0),
                weight: 0.5,
            },
            ThetaSample {
                cov: make(-1.0),
                weight: 0.5,
            },
        ];
        let mut h = History::new(3, 1, 0.0).unwrap();
        h.record(Action::new(0, 0), 1.0).unwrap();
        (samples, h)
    }

    #[test]
    fn bin_masses_sum_to_one_and_are_symmetric() {
        let grid = BinGrid::new(-8.0, 8.0, 32).unwrap();
        let mut m = vec![0.0; 32];
        grid.masses(0.0, 1.0, &mut m);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for b in 0..32 {
            assert!((m[b] - m[31 - b]).abs() < 1e-9);
        }
        grid.masses(0.7, 0.3, &mut m);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tails_fold_into_end_bins() {
        let grid = BinGrid::new(0.0, 1.0, 4).unwrap();
        let mut m = vec![0.0; 4];
        grid.masses(-5.0, 0.1, &mut m);
        assert!((m[0] - 1.0).abs() < 1e-12);
        grid.masses(0.5, 0.0, &mut m);
        assert_eq!(m, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn bin_grid_validation() {
        assert!(BinGrid::new(0.0, 1.0, 1).is_err());
        assert!(BinGrid::new(1.0, 1.0, 4).is_err());
        assert!(BinGrid::new(f64::NAN, 1.0, 4).is_err());
    }

    #[test]
    fn single_sample_has_zero_information() {
        let (mut samples, h) = revealing_toy(1e-4);
        samples.truncate(1);
        samples[0].weight = 1.0;
        let t = approx_info_ratio(&samples, &h, &BinSpec::default(), None).unwrap();
        assert!(t.info_values().iter().all(|g| *g == 0.0));
        // The sample's best action has zero regret, the other pays the gap.
        assert_eq!(t.regret(Action::new(1, 0)), Some(0.0));
        let gap = t.regret(Action::new(2, 0)).unwrap();
        assert!((gap - 1.8).abs() < 0.05, "gap {gap}");
    }

    #[test]
    fn revealing_action_carries_one_bit() {
        let (samples, h) = revealing_toy(1e-4);
        let t = approx_info_ratio(&samples, &h, &BinSpec::default(), None).unwrap();
        for a in [Action::new(1, 0), Action::new(2, 0)] {
            assert_relative_eq!(t.info(a).unwrap(), 2f64.ln(), max_relative = 1e-6);
        }
        let total: f64 = t.p_star().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_predictives_carry_no_information() {
        // Both samples agree on row 1 but disagree on row 2.
        let make = |s: f64| {
            DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.5, 0.8 * s, 0.5, 1.0, 0.4 * s, 0.8 * s, 0.4 * s, 1.0],
            )
        };
        let samples = vec![
            ThetaSample {
                cov: make(1.0),
                weight: 0.3,
            },
            ThetaSample {
                cov: make(-1.0),
                weight: 0.7,
            },
        ];
        let mut h = History::new(3, 1, 0.0).unwrap();
        h.record(Action::new(0, 0), 2.0).unwrap();
        let spec = BinSpec::Fixed(BinGrid::new(-6.0, 6.0, 32).unwrap());
        let t = approx_info_ratio(&samples, &h, &spec, None).unwrap();
        assert!(t.info(Action::new(1, 0)).unwrap().abs() < 1e-9);
        assert!(t.info(Action::new(2, 0)).unwrap() > 0.1);
    }

    #[test]
    fn candidate_restriction_keeps_best_actions() {
        let (mut samples, _) = revealing_toy(1e-2);
        samples.truncate(1);
        samples[0].weight = 1.0;
        let mut h = History::new(3, 2, 0.0).unwrap();
        h.record(Action::new(0, 0), 1.0).unwrap();
        let t = approx_info_ratio(&samples, &h, &BinSpec::default(), Some(2)).unwrap();
        // Only (1, 0) has a positive predictive mean; the rest tie at zero or below.
        assert_eq!(t.actions(), &[Action::new(0, 1), Action::new(1, 0)]);
        let full = approx_info_ratio(&samples, &h, &BinSpec::default(), None).unwrap();
        assert_eq!(full.actions().len(), 5);
    }

    #[test]
    fn ratio_arithmetic_picks_second_action() {
        let h = History::new(1, 2, 0.0).unwrap();
        let acts = vec![Action::new(0, 0), Action::new(0, 1)];
        let t =
            InfoRatioTables::new(acts, vec![1.0, 2.0], vec![1.0, 8.0], vec![0.0; 2], 2.0).unwrap();
        assert_eq!(
            ids_select_batch(&t, &h, 1).unwrap(),
            vec![Action::new(0, 1)]
        );
    }

    #[test]
    fn zero_regret_goes_first_and_batch_removes_picks() {
        let h = History::new(1, 3, 0.0).unwrap();
        let acts = vec![Action::new(0, 0), Action::new(0, 1), Action::new(0, 2)];
        let t = InfoRatioTables::new(
            acts,
            vec![1.0, 0.0, 0.5],
            vec![5.0, 0.5, 0.0],
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let picks = ids_select_batch(&t, &h, 3).unwrap();
        // (0,1): ratio 0; (0,0): 0.2; (0,2): infinite, taken last by fallback.
        assert_eq!(
            picks,
            vec![Action::new(0, 1), Action::new(0, 0), Action::new(0, 2)]
        );
        assert!(ids_select_batch(&t, &h, 4).is_err());
    }

    #[test]
    fn all_infinite_ratios_fall_back_to_min_regret() {
        let h = History::new(1, 2, 0.0).unwrap();
        let acts = vec![Action::new(0, 0), Action::new(0, 1)];
        let t =
            InfoRatioTables::new(acts, vec![2.0, 1.0], vec![0.0, 0.0], vec![0.0; 2], 1.0).unwrap();
        assert_eq!(
            ids_select_batch(&t, &h, 1).unwrap(),
            vec![Action::new(0, 1)]
        );
    }

    #[test]
    fn positive_discount_updates_regret_of_repeated_pick() {
        let h = History::new(1, 2, 0.5).unwrap();
        let acts = vec![Action::new(0, 0), Action::new(0, 1)];
        // After one pull (0,0) is worth 2.0 and regret 4 - 2 = 2 with info 1:
        // ratio 4 against (0,1)'s 9 / 2 = 4.5.
        let t = InfoRatioTables::new(acts, vec![0.0, 3.0], vec![1.0, 2.0], vec![4.0, 1.0], 4.0)
            .unwrap();
        let picks = ids_select_batch(&t, &h, 3).unwrap();
        assert_eq!(
            picks,
            vec![Action::new(0, 0), Action::new(0, 0), Action::new(0, 1)]
        );
    }

    #[test]
    fn rejects_bad_weights() {
        let (mut samples, h) = revealing_toy(1e-3);
        samples[0].weight = 0.6;
        assert!(approx_info_ratio(&samples, &h, &BinSpec::default(), None).is_err());
        assert!(approx_info_ratio(&[], &h, &BinSpec::default(), None).is_err());
    }
}
