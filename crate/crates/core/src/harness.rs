//! Bandit environment, regret accounting and the experiment loop.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::column_covariance;
use crate::policies::{
    approx_info_ratio, discount_factor, empirical_cov_select, greedy_completion_select,
    ids_select_batch, oracle_select, random_select, thompson_select_batch, Action, GreedyConfig,
    History, IdsConfig, ThetaSample,
};
use crate::svi::{self, sample_params, ModelHyper, SviConfig};

/// Number of steps `K (N + D - K)`.
pub fn horizon(k_star: usize, n: usize, d: usize) -> Result<usize> {
    if k_star == 0 || n == 0 || d == 0 {
        return Err(Error::domain("horizon needs positive rank and dimensions"));
    }
    if k_star > n.min(d) {
        return Err(Error::domain(format!(
            "rank {k_star} exceeds min(N, D) = {}",
            n.min(d)
        )));
    }
    Ok(k_star * (n + d - k_star))
}

/// Observations between posterior refits: `H / 40`, at least one.
pub fn default_batch_size(horizon: usize) -> usize {
    (horizon / 40).max(1)
}

/// Distribution of the true loading entries in synthetic problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDist {
    Uniform01,
    Beta25,
}

impl FromStr for WeightDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform01" => Ok(Self::Uniform01),
            "beta25" => Ok(Self::Beta25),
            _ => Err(Error::Config(format!(
                "unknown weight distribution `{s}` (expected uniform01 or beta25)"
            ))),
        }
    }
}

impl fmt::Display for WeightDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform01 => "uniform01",
            Self::Beta25 => "beta25",
        })
    }
}

/// Draws `W_true` (`D x K`) and a `D x N` matrix whose columns are
/// i.i.d. `N(0, W W^T + sigma^2 I)`.
pub fn synth_generate<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    k_true: usize,
    dist: WeightDist,
    sigma: f64,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d == 0 || n == 0 || k_true == 0 || k_true > d.min(n) {
        return Err(Error::domain(format!(
            "need 0 < K_true <= min(D, N), got K_true={k_true}, D={d}, N={n}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let beta = Beta::new(2.0, 5.0).map_err(|e| Error::domain(e.to_string()))?;
    let mut w = DMatrix::zeros(d, k_true);
    for j in 0..k_true {
        for i in 0..d {
            w[(i, j)] = match dist {
                WeightDist::Uniform01 => rng.random::<f64>(),
                WeightDist::Beta25 => beta.sample(rng),
            };
        }
    }
    let mut m = DMatrix::zeros(d, n);
    let mut z = vec![0.0; k_true];
    for j in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            m[(i, j)] = (0..k_true).map(|k| w[(i, k)] * z[k]).sum::<f64>() + sigma * eps;
        }
    }
    Ok((w, m))
}

/// Ground truth for one run: the reward matrix and the covariance the
/// oracle policy conditions with.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub matrix: DMatrix<f64>,
    pub true_cov: DMatrix<f64>,
}

impl Problem {
    pub fn synthetic<R: Rng + ?Sized>(
        d: usize,
        n: usize,
        k_true: usize,
        dist: WeightDist,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (w, matrix) = synth_generate(d, n, k_true, dist, sigma, rng)?;
        Ok(Self {
            matrix,
            true_cov: column_covariance(&w, sigma),
        })
    }

    /// For a loaded matrix the oracle uses the column second-moment matrix
    /// `M M^T / N` plus the model noise on the diagonal.
    pub fn from_matrix(matrix: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if matrix.is_empty() || !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::domain(
                "ground-truth matrix must be nonempty and finite",
            ));
        }
        let n = matrix.ncols() as f64;
        let mut true_cov = &matrix * matrix.transpose() / n;
        for i in 0..true_cov.nrows() {
            true_cov[(i, i)] += sigma * sigma;
        }
        Ok(Self { matrix, true_cov })
    }
}

/// Outcome of one pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pull {
    /// Undiscounted noisy value `M[a] + eps`.
    pub raw: f64,
    /// What the learner receives: `raw * beta^count`.
    pub reward: f64,
    /// Noiseless discounted value `M[a] * beta^count`.
    pub expected: f64,
}

/// The true matrix with per-entry pull counters and observation noise.
#[derive(Debug, Clone)]
pub struct Environment {
    matrix: DMatrix<f64>,
    noise_sigma: f64,
    beta: f64,
    pulls: DMatrix<u32>,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(matrix: DMatrix<f64>, noise_sigma: f64, beta: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::domain(format!(
                "noise sigma must be >= 0, got {noise_sigma}"
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::domain(format!(
                "discount must lie in [0, 1], got {beta}"
            )));
        }
        let (d, n) = matrix.shape();
        Ok(Self {
            matrix,
            noise_sigma,
            beta,
            pulls: DMatrix::zeros(d, n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn pull_count(&self, a: Action) -> u32 {
        self.pulls[(a.row, a.col)]
    }

    pub fn step(&mut self, a: Action) -> Result<Pull> {
        let (d, n) = self.matrix.shape();
        if a.row >= d || a.col >= n {
            return Err(Error::domain(format!(
                "action {a} outside a {d}x{n} matrix"
            )));
        }
        let disc = discount_factor(self.beta, self.pulls[(a.row, a.col)]);
        let value = self.matrix[(a.row, a.col)];
        let raw = if self.noise_sigma > 0.0 {
            let eps: f64 = self.rng.sample(StandardNormal);
            value + self.noise_sigma * eps
        } else {
            value
        };
        self.pulls[(a.row, a.col)] += 1;
        Ok(Pull {
            raw,
            reward: raw * disc,
            expected: value * disc,
        })
    }
}

#[derive(Debug, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

/// Best achievable cumulative expected reward after `0..=t_max` steps.
///
/// Each entry offers the sequence `M_ij beta^k`; greedily taking the largest
/// remaining term is optimal whatever the signs: nonnegative sequences
/// decrease, and when only negative entries remain the best plan repeats
/// the least negative one, whose terms then increase towards zero.
pub fn optimal_reward_curve(m: &DMatrix<f64>, t_max: usize, beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain(format!(
            "discount must lie in [0, 1], got {beta}"
        )));
    }
    let total = m.len();
    if beta == 0.0 && t_max > total {
        return Err(Error::domain(format!(
            "{t_max} steps exceed the {total} entries playable once"
        )));
    }
    let mut curve = Vec::with_capacity(t_max + 1);
    curve.push(0.0);
    if beta == 0.0 {
        let mut values: Vec<f64> = m.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        for v in values.into_iter().take(t_max) {
            acc += v;
            curve.push(acc);
        }
        return Ok(curve);
    }
    let mut heap: BinaryHeap<HeapItem> =
        m.iter().enumerate().map(|(i, &v)| HeapItem(v, i)).collect();
    let mut acc = 0.0;
    for _ in 0..t_max {
        let HeapItem(v, i) = heap.pop().expect("heap never empties when beta > 0");
        acc += v;
        curve.push(acc);
        heap.push(HeapItem(v * beta, i));
    }
    Ok(curve)
}

pub fn optimal_cumulative_reward(m: &DMatrix<f64>, t: usize, beta: f64) -> Result<f64> {
    Ok(optimal_reward_curve(m, t, beta)?[t])
}

/// One recorded step. `step` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub reward: f64,
    pub expected_reward: f64,
    pub cum_regret: f64,
}

/// Everything a run produced. Timing lives here only, never in output files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub steps: Vec<TraceStep>,
    pub warm_start: usize,
    pub refit_seconds: Vec<f64>,
    /// Set when the run stopped early after a failed refit.
    pub failure: Option<String>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps
            .iter()
            .map(|s| Action::new(s.row, s.col))
            .collect()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.steps.last().map(|s| s.cum_regret)
    }
}

/// Cumulative pseudo-regret after `0..=len` steps, from the actions alone:
/// the noiseless discounted value of each pick is recomputed from `m`.
pub fn pseudo_regret(actions: &[Action], m: &DMatrix<f64>, beta: f64) -> Result<Vec<f64>> {
    let opt = optimal_reward_curve(m, actions.len(), beta)?;
    let mut counts = DMatrix::<u32>::zeros(m.nrows(), m.ncols());
    let mut gained = 0.0;
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(0.0);
    for (t, a) in actions.iter().enumerate() {
        if a.row >= m.nrows() || a.col >= m.ncols() {
            return Err(Error::domain(format!("action {a} outside the matrix")));
        }
        gained += m[(a.row, a.col)] * discount_factor(beta, counts[(a.row, a.col)]);
        counts[(a.row, a.col)] += 1;
        out.push(opt[t + 1] - gained);
    }
    Ok(out)
}

/// Selection policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Ts,
    Ids,
    Oracle,
    Empirical,
    Greedy,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        Self::Ts,
        Self::Ids,
        Self::Oracle,
        Self::Empirical,
        Self::Greedy,
        Self::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ts => "ts",
            Self::Ids => "ids",
            Self::Oracle => "oracle",
            Self::Empirical => "empirical",
            Self::Greedy => "greedy",
            Self::Random => "random",
        }
    }

    /// Policies that refit the factor model between batches.
    pub fn uses_model(self) -> bool {
        matches!(self, Self::Ts | Self::Ids)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|p| *p == self).expect("listed") as u64
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown policy `{s}` (expected one of ts, ids, oracle, empirical, greedy, random)"
                ))
            })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a path of stream labels.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Seeds of one run. Problem and warm-start seeds ignore the policy so that
/// every policy faces the same matrix and the same warm start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub problem: u64,
    pub warm_start: u64,
    pub noise: u64,
    pub policy: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, rank: usize, policy: PolicyKind, run: usize) -> Self {
        let base = [rank as u64, run as u64];
        Self {
            problem: derive_seed(master, &[1, base[0], base[1]]),
            warm_start: derive_seed(master, &[2, base[0], base[1]]),
            noise: derive_seed(master, &[3, base[0], base[1]]),
            policy: derive_seed(master, &[4, base[0], base[1], policy.index()]),
        }
    }
}

/// Settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Rank bound of the fitted model (and of greedy imputation).
    pub k_model: usize,
    /// True rank of a synthetic problem. The horizon uses it when known,
    /// `k_model` otherwise.
    pub k_true: Option<usize>,
    /// Model noise standard deviation.
    pub sigma: f64,
    pub beta: f64,
    /// Std of noise added to observations by the environment.
    pub noise_sigma: f64,
    pub horizon_override: Option<usize>,
    pub warm_start_fraction: f64,
    pub with_replacement: bool,
    pub n_obs_per_refit: Option<usize>,
    pub policy: PolicyKind,
    pub svi: SviConfig,
    pub ids: IdsConfig,
    pub greedy: GreedyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k_model: 10,
            k_true: None,
            sigma: 0.1f64.sqrt(),
            beta: 0.0,
            noise_sigma: 0.0,
            horizon_override: None,
            warm_start_fraction: 0.02,
            with_replacement: false,
            n_obs_per_refit: None,
            policy: PolicyKind::Random,
            svi: SviConfig::default(),
            ids: IdsConfig::default(),
            greedy: GreedyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn horizon(&self, d: usize, n: usize) -> Result<usize> {
        let h = match self.horizon_override {
            Some(h) => h,
            None => horizon(self.k_true.unwrap_or(self.k_model), n, d)?,
        };
        if h == 0 || h > d * n {
            return Err(Error::Config(format!(
                "horizon {h} must lie in 1..={} for a {d}x{n} matrix",
                d * n
            )));
        }
        Ok(h)
    }

    pub fn batch_size(&self, horizon: usize) -> usize {
        self.n_obs_per_refit
            .unwrap_or_else(|| default_batch_size(horizon))
    }

    pub fn warm_start_count(&self, horizon: usize) -> usize {
        ((self.warm_start_fraction * horizon as f64).round() as usize).clamp(1, horizon)
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_model == 0 {
            return bad("k_model must be >= 1".into());
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.warm_start_fraction > 0.0 && self.warm_start_fraction < 1.0) {
            return bad(format!(
                "warm_start_fraction must lie in (0, 1), got {}",
                self.warm_start_fraction
            ));
        }
        if self.n_obs_per_refit == Some(0) {
            return bad("n_obs_per_refit must be >= 1".into());
        }
        if self.ids.n_theta == 0 {
            return bad("ids.n_theta must be >= 1".into());
        }
        if self.ids.candidates == Some(0) {
            return bad("ids.candidates must be >= 1".into());
        }
        self.svi.validate()?;
        let h = self.horizon(d, n)?;
        if let Some(c) = self.ids.candidates {
            if self.policy == PolicyKind::Ids && self.beta == 0.0 && c < self.batch_size(h) {
                return bad(format!(
                    "ids.candidates ({c}) is smaller than the batch size ({})",
                    self.batch_size(h)
                ));
            }
        }
        Ok(())
    }
}

/// Warm-start entries, uniformly at random.
pub fn warm_start_actions<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    count: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Vec<Action>> {
    let total = d * n;
    let to_action = |i: usize| Action::new(i / n, i % n);
    if with_replacement {
        return Ok((0..count)
            .map(|_| to_action(rng.random_range(0..total)))
            .collect());
    }
    if count > total {
        return Err(Error::domain(format!(
            "cannot draw {count} distinct entries from {total}"
        )));
    }
    Ok(index::sample(rng, total, count)
        .into_iter()
        .map(to_action)
        .collect())
}

fn select_model_batch(
    config: &ExperimentConfig,
    history: &History,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Action>, usize)> {
    let hyper = ModelHyper::new(config.k_model, config.sigma)?;
    let columns = history.columns()?;
    let fit = svi::fit(&columns, &hyper, &config.svi, rng)?;
    let picks = match config.policy {
        PolicyKind::Ts => thompson_select_batch(&fit.posterior, config.sigma, history, batch, rng)?,
        PolicyKind::Ids => {
            let weight = 1.0 / config.ids.n_theta as f64;
            let samples = (0..config.ids.n_theta)
                .map(|_| {
                    Ok(ThetaSample {
                        cov: sample_params(&fit.posterior, config.sigma, rng)?.covariance(),
                        weight,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let tables =
                approx_info_ratio(&samples, history, &config.ids.bins, config.ids.candidates)?;
            log::debug!(
                "ids: {} candidate optimal actions, max info {:.3e}",
                tables.p_star().len(),
                tables.info_values().iter().cloned().fold(0.0, f64::max)
            );
            ids_select_batch(&tables, history, batch)?
        }
        other => unreachable!("{other} does not use the model"),
    };
    Ok((picks, fit.iterations))
}

#[derive(Default)]
struct Recorder {
    actions: Vec<Action>,
    rewards: Vec<f64>,
    expected: Vec<f64>,
}

impl Recorder {
    fn take(&mut self, a: Action, env: &mut Environment, history: &mut History) -> Result<()> {
        let pull = env.step(a)?;
        history.record(a, pull.raw)?;
        self.actions.push(a);
        self.rewards.push(pull.reward);
        self.expected.push(pull.expected);
        Ok(())
    }
}

/// Runs one policy against `problem` for the configured horizon.
///
/// A refit (or the selection that follows it) that fails is retried once
/// with a fresh random stream; a second failure ends the run early with
/// `failure` set and the steps taken so far kept.
pub fn run_experiment(
    config: &ExperimentConfig,
    problem: &Problem,
    seeds: RunSeeds,
) -> Result<RunTrace> {
    let (d, n) = problem.matrix.shape();
    config.validate(d, n)?;
    let h = config.horizon(d, n)?;
    let batch = config.batch_size(h);
    let mut env = Environment::new(
        problem.matrix.clone(),
        config.noise_sigma,
        config.beta,
        seeds.noise,
    )?;
    let mut history = History::new(d, n, config.beta)?;
    let mut trace = RunTrace::default();
    let mut rec = Recorder::default();

    let warm_count = config.warm_start_count(h);
    let mut warm_rng = ChaCha8Rng::seed_from_u64(seeds.warm_start);
    for a in warm_start_actions(d, n, warm_count, config.with_replacement, &mut warm_rng)? {
        rec.take(a, &mut env, &mut history)?;
    }
    trace.warm_start = warm_count;

    let mut rng = ChaCha8Rng::seed_from_u64(seeds.policy);
    let mut refit = 0u64;
    let mut steps = warm_count;
    while steps < h {
        let size = batch.min(h - steps);
        if config.policy.uses_model() {
            let started = Instant::now();
            let mut outcome = select_model_batch(config, &history, size, &mut rng);
            if let Err(e) = &outcome {
                log::warn!(
                    "{} refit {refit} failed ({e}); retrying with a new seed",
                    config.policy
                );
                rng = ChaCha8Rng::seed_from_u64(derive_seed(seeds.policy, &[refit, 1]));
                outcome = select_model_batch(config, &history, size, &mut rng);
            }
            let elapsed = started.elapsed().as_secs_f64();
            match outcome {
                Ok((picks, iters)) => {
                    trace.refit_seconds.push(elapsed);
                    log::info!(
                        "{} refit {refit}: {} observed, {iters} SVI iterations, {elapsed:.2}s",
                        config.policy,
                        history.n_observed()
                    );
                    for a in picks {
                        rec.take(a, &mut env, &mut history)?;
                    }
                }
                Err(e) => {
                    log::error!("{} refit {refit} failed twice: {e}", config.policy);
                    trace.failure = Some(format!("refit {refit} failed twice: {e}"));
                    break;
                }
            }
            refit += 1;
        } else {
            for _ in 0..size {
                let a = match config.policy {
                    PolicyKind::Oracle => oracle_select(&problem.true_cov, &history, &mut rng)?,
                    PolicyKind::Empirical => empirical_cov_select(&history, &mut rng)?,
                    PolicyKind::Greedy => {
                        greedy_completion_select(&history, config.k_model, &config.greedy)?
                    }
                    PolicyKind::Random => random_select(&history, &mut rng)?,
                    other => unreachable!("{other} uses the model"),
                };
                rec.take(a, &mut env, &mut history)?;
            }
        }
        steps = rec.actions.len();
    }

    let regret = pseudo_regret(&rec.actions, &problem.matrix, config.beta)?;
    trace.steps = rec
        .actions
        .iter()
        .enumerate()
        .map(|(t, a)| TraceStep {
            step: t + 1,
            row: a.row,
            col: a.col,
            reward: rec.rewards[t],
            expected_reward: rec.expected[t],
            cum_regret: regret[t + 1],
        })
        .collect();
    Ok(trace)
}

/// Mean and standard error of cumulative regret per step across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub step: usize,
    pub mean_regret: f64,
    pub stderr: f64,
}

/// Aggregates runs step by step; runs that stopped early contribute only
/// to the steps they reached.
pub fn aggregate(traces: &[RunTrace]) -> Vec<AggregateRow> {
    let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..longest)
        .map(|i| {
            let values: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.steps.get(i).map(|s| s.cum_regret))
                .collect();
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                step: i + 1,
                mean_regret: mean,
                stderr,
            }
        })
        .collect()
}
