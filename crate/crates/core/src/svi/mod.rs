//! Stochastic variational inference for the gamma-process factor model.
//!
//! The variational family is mean-field log-normal: every coordinate `theta`
//! of `(W, r, gamma, gamma0, c0)` has `log theta ~ N(mu, exp(log_scale)^2)`.
//! The ELBO `E_q[log p(theta, data) - log q(theta)]` is maximised by AdaDelta
//! ascent on Monte Carlo gradients obtained with the reparametrization
//! `theta = exp(mu + z * exp(log_scale))`, `z ~ N(0, 1)`.
//!
//! The entropy of `q` is handled analytically: for a log-normal it equals
//! `mu + log_scale + 0.5 * ln(2 pi e)` per coordinate, so only the log-joint
//! term is sampled and the entropy contributes exactly `+1` to every `mu`
//! and every `log_scale` gradient coordinate.

mod adadelta;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;

pub use adadelta::AdaDeltaState;

use crate::error::{Error, Result};
use crate::model::{check_columns, Coord, FactorParams, LogJointEval, ParamLayout, PartialColumn};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

/// Rank bound and fixed noise scale shared by every inference call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHyper {
    pub rank: usize,
    pub sigma: f64,
}

impl ModelHyper {
    pub fn new(rank: usize, sigma: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::domain("model rank bound must be >= 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { rank, sigma })
    }

    fn layout(&self, columns: &[PartialColumn]) -> Result<ParamLayout> {
        let dim = columns
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| Error::domain("need at least one column"))?;
        check_columns(dim, columns)?;
        ParamLayout::new(dim, self.rank)
    }
}

/// Mean-field log-normal posterior over every model coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    layout: ParamLayout,
    mu: Vec<f64>,
    log_scale: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(layout: ParamLayout, mu: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        if mu.len() != layout.len() || log_scale.len() != layout.len() {
            return Err(Error::domain(format!(
                "posterior needs {} locations and scales, got {} and {}",
                layout.len(),
                mu.len(),
                log_scale.len()
            )));
        }
        // log_scale = -inf is a point mass and is allowed.
        if mu.iter().any(|x| !x.is_finite())
            || log_scale.iter().any(|x| x.is_nan() || *x == f64::INFINITY)
        {
            return Err(Error::domain("posterior parameters must be finite"));
        }
        Ok(Self {
            layout,
            mu,
            log_scale,
        })
    }

    /// Locations at `log(params)` and a common initial log-scale.
    pub fn centered(params: &FactorParams, log_scale: f64) -> Self {
        let layout = params.layout();
        Self {
            layout,
            mu: params.to_log_vec(),
            log_scale: vec![log_scale; layout.len()],
        }
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn location(&self, coord: Coord) -> f64 {
        self.mu[self.layout.index(coord)]
    }

    pub fn scale(&self, coord: Coord) -> f64 {
        self.log_scale[self.layout.index(coord)].exp()
    }

    /// Posterior mean `E_q[theta] = exp(mu + s^2 / 2)` of every coordinate.
    pub fn mean_params(&self, sigma: f64) -> Result<FactorParams> {
        let u: Vec<f64> = self
            .mu
            .iter()
            .zip(&self.log_scale)
            .map(|(m, ls)| m + 0.5 * (2.0 * ls).exp())
            .collect();
        FactorParams::from_log_vec(self.layout, &u, sigma)
    }

    /// Posterior mean of the factor rates `r`.
    pub fn mean_rates(&self) -> Vec<f64> {
        (0..self.layout.rank)
            .map(|k| {
                let i = self.layout.index(Coord::R(k));
                (self.mu[i] + 0.5 * (2.0 * self.log_scale[i]).exp()).exp()
            })
            .collect()
    }

    /// Analytic entropy of `q` as a density over `theta`.
    pub fn entropy(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.log_scale)
            .map(|(m, ls)| m + ls + HALF_LN_2PI_E)
            .sum()
    }

    /// Fills `z` with standard normals and `u` with `mu + z * scale`.
    fn draw_log<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], u: &mut [f64]) {
        for i in 0..self.mu.len() {
            let zi: f64 = rng.sample(StandardNormal);
            z[i] = zi;
            u[i] = self.mu[i] + zi * self.log_scale[i].exp();
        }
    }
}

/// One reparametrized draw `theta = exp(mu + z * scale)` assembled into model parameters.
pub fn sample_params<R: Rng + ?Sized>(
    q: &VariationalPosterior,
    sigma: f64,
    rng: &mut R,
) -> Result<FactorParams> {
    let n = q.layout.len();
    let (mut z, mut u) = (vec![0.0; n], vec![0.0; n]);
    q.draw_log(rng, &mut z, &mut u);
    FactorParams::from_log_vec(q.layout, &u, sigma)
}

/// Monte Carlo ELBO: mean log joint over `n` draws plus the analytic entropy.
pub fn elbo_estimate<R: Rng + ?Sized>(
    q: &VariationalPosterior,
    columns: &[PartialColumn],
    hyper: &ModelHyper,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("need at least one Monte Carlo sample"));
    }
    check_layout(q, hyper, columns)?;
    let mut eval = LogJointEval::new(q.layout, columns, hyper.sigma);
    let p = q.layout.len();
    let (mut z, mut u) = (vec![0.0; p], vec![0.0; p]);
    let mut total = 0.0;
    for _ in 0..n {
        q.draw_log(rng, &mut z, &mut u);
        total += eval.eval(&u, None)?;
    }
    Ok(total / n as f64 + q.entropy())
}

/// ELBO gradient with respect to `mu` and `log_scale`, plus the ELBO estimate
/// from the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub elbo: f64,
    pub mu: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl ElboGradient {
    /// `mu` coordinates followed by `log_scale` coordinates.
    pub fn concat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.log_scale).copied().collect()
    }
}

/// Reparametrization-trick gradient of the ELBO.
///
/// Draws the same normals in the same order as [`elbo_estimate`], so both
/// functions seen through one seed use common random numbers.
pub fn elbo_gradient_estimate<R: Rng + ?Sized>(
    q: &VariationalPosterior,
    columns: &[PartialColumn],
    hyper: &ModelHyper,
    n: usize,
    rng: &mut R,
) -> Result<ElboGradient> {
    if n == 0 {
        return Err(Error::domain("need at least one Monte Carlo sample"));
    }
    check_layout(q, hyper, columns)?;
    let mut eval = LogJointEval::new(q.layout, columns, hyper.sigma);
    gradient_with(&mut eval, q, n, rng)
}

fn gradient_with<R: Rng + ?Sized>(
    eval: &mut LogJointEval,
    q: &VariationalPosterior,
    n: usize,
    rng: &mut R,
) -> Result<ElboGradient> {
    let p = q.layout.len();
    let (mut z, mut u, mut g) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut mu_grad = vec![0.0; p];
    let mut ls_grad = vec![0.0; p];
    let scales: Vec<f64> = q.log_scale.iter().map(|x| x.exp()).collect();
    let mut total = 0.0;
    for _ in 0..n {
        q.draw_log(rng, &mut z, &mut u);
        total += eval.eval(&u, Some(&mut g))?;
        for i in 0..p {
            mu_grad[i] += g[i];
            ls_grad[i] += g[i] * z[i] * scales[i];
        }
    }
    let inv = 1.0 / n as f64;
    mu_grad.iter_mut().for_each(|x| *x = *x * inv + 1.0);
    ls_grad.iter_mut().for_each(|x| *x = *x * inv + 1.0);
    Ok(ElboGradient {
        elbo: total * inv + q.entropy(),
        mu: mu_grad,
        log_scale: ls_grad,
    })
}

fn check_layout(
    q: &VariationalPosterior,
    hyper: &ModelHyper,
    columns: &[PartialColumn],
) -> Result<()> {
    let layout = hyper.layout(columns)?;
    if layout != q.layout {
        return Err(Error::domain(format!(
            "posterior covers {:?} but data/hyper imply {:?}",
            q.layout, layout
        )));
    }
    Ok(())
}

/// Settings of the maximum a posteriori initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub iters: usize,
    pub rho: f64,
    pub eps: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            rho: AdaDeltaState::DEFAULT_RHO,
            eps: AdaDeltaState::DEFAULT_EPS,
        }
    }
}

/// Log posterior density of the log-parameters: `log_joint(exp(u)) + sum(u)`.
///
/// This is the objective the MAP initialisation climbs and the `scale -> 0`
/// limit of the ELBO up to a constant.
pub fn map_objective(params: &FactorParams, columns: &[PartialColumn]) -> Result<f64> {
    check_columns(params.dim(), columns)?;
    let u = params.to_log_vec();
    let lj = LogJointEval::new(params.layout(), columns, params.sigma).eval(&u, None)?;
    Ok(lj + u.iter().sum::<f64>())
}

/// Random starting point scaled to the observed data.
///
/// Loadings and rates start near `sqrt(max(v - sigma^2, 0.1 v) / K)` where `v`
/// is the mean squared observation, each perturbed by a log-normal factor.
pub fn random_start<R: Rng + ?Sized>(
    columns: &[PartialColumn],
    hyper: &ModelHyper,
    rng: &mut R,
) -> Result<FactorParams> {
    let layout = hyper.layout(columns)?;
    let s2 = hyper.sigma * hyper.sigma;
    let (sum_sq, count) = columns
        .iter()
        .flat_map(|c| c.observed_vals())
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    let v = if count > 0 {
        sum_sq / count as f64
    } else {
        1.0 + s2
    };
    let base = ((v - s2).max(0.1 * v) / hyper.rank as f64).sqrt().ln();
    let mut u = vec![0.0; layout.len()];
    for (i, x) in u.iter_mut().enumerate() {
        let jitter = 0.5 * rng.sample::<f64, _>(StandardNormal);
        *x = match layout.coord(i) {
            Coord::W(..) | Coord::R(_) => base + jitter,
            _ => jitter,
        };
    }
    FactorParams::from_log_vec(layout, &u, hyper.sigma)
}

/// Approximate MAP estimate by AdaDelta ascent of [`map_objective`] from a
/// random start. Returns the best iterate seen, so the result never scores
/// below the start.
pub fn map_initialize<R: Rng + ?Sized>(
    columns: &[PartialColumn],
    hyper: &ModelHyper,
    config: &MapConfig,
    rng: &mut R,
) -> Result<FactorParams> {
    if config.iters == 0 {
        return Err(Error::domain("MAP initialisation needs iters >= 1"));
    }
    let start = random_start(columns, hyper, rng)?;
    map_ascend(columns, &start, config)
}

/// MAP ascent from an explicit starting point.
pub fn map_ascend(
    columns: &[PartialColumn],
    start: &FactorParams,
    config: &MapConfig,
) -> Result<FactorParams> {
    let layout = start.layout();
    check_columns(layout.dim, columns)?;
    let mut eval = LogJointEval::new(layout, columns, start.sigma);
    let p = layout.len();
    let mut u = start.to_log_vec();
    let mut g = vec![0.0; p];
    let mut state = AdaDeltaState::new(p, config.rho, config.eps);
    let mut best_u = u.clone();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..config.iters {
        let value = eval.eval(&u, Some(&mut g))? + u.iter().sum::<f64>();
        if value > best {
            best = value;
            best_u.copy_from_slice(&u);
        }
        g.iter_mut().for_each(|x| *x += 1.0);
        let step = state.step(&g);
        for (ui, si) in u.iter_mut().zip(&step) {
            *ui += si;
        }
    }
    if let Ok(last) = eval.eval(&u, None) {
        if last + u.iter().sum::<f64>() > best {
            best_u = u;
        }
    }
    FactorParams::from_log_vec(layout, &best_u, start.sigma)
}

/// Settings of the SVI loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SviConfig {
    pub n_mc_samples: usize,
    pub max_iters: usize,
    pub convergence_window: usize,
    pub convergence_rel_tol: f64,
    pub rho: f64,
    pub eps: f64,
    /// Initial `log_scale` of every coordinate after MAP centering.
    pub init_log_scale: f64,
    pub map: MapConfig,
    /// When set, one `iter,elbo_estimate,step_norm` CSV line per iteration.
    pub trace_path: Option<PathBuf>,
}

impl Default for SviConfig {
    fn default() -> Self {
        Self {
            n_mc_samples: 8,
            max_iters: 5000,
            convergence_window: 50,
            convergence_rel_tol: 1e-4,
            rho: AdaDeltaState::DEFAULT_RHO,
            eps: AdaDeltaState::DEFAULT_EPS,
            init_log_scale: 0.1f64.ln(),
            map: MapConfig::default(),
            trace_path: None,
        }
    }
}

impl SviConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_mc_samples == 0 {
            return bad("svi.n_mc_samples must be >= 1");
        }
        if self.max_iters == 0 {
            return bad("svi.max_iters must be >= 1");
        }
        if self.convergence_window == 0 {
            return bad("svi.convergence_window must be >= 1");
        }
        if !(self.convergence_rel_tol > 0.0 && self.convergence_rel_tol < 1.0) {
            return bad("svi.convergence_rel_tol must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.map.rho > 0.0 && self.map.rho < 1.0) {
            return bad("AdaDelta rho must lie in (0, 1)");
        }
        if !(self.eps > 0.0) || !(self.map.eps > 0.0) {
            return bad("AdaDelta eps must be > 0");
        }
        if self.map.iters == 0 {
            return bad("svi.map_iters must be >= 1");
        }
        if !self.init_log_scale.is_finite() {
            return bad("svi.init_log_scale must be finite");
        }
        Ok(())
    }
}

/// Result of [`fit`]. `converged == false` means the iteration cap was hit
/// first; the posterior is still usable.
#[derive(Debug, Clone, PartialEq)]
pub struct SviFit {
    pub posterior: VariationalPosterior,
    pub map_params: FactorParams,
    pub converged: bool,
    pub iterations: usize,
    /// Per-iteration ELBO estimates.
    pub elbo_trace: Vec<f64>,
}

/// MAP-centred initialisation followed by AdaDelta SVI.
///
/// Every `convergence_window` iterations, compares the mean ELBO of the
/// latest window with the mean of the window before it and stops when they
/// differ by less than `convergence_rel_tol` relative; otherwise runs to
/// `max_iters`. Checking only at window boundaries keeps Monte Carlo noise
/// from triggering a stop on a chance near-equality.
pub fn fit<R: Rng + ?Sized>(
    columns: &[PartialColumn],
    hyper: &ModelHyper,
    config: &SviConfig,
    rng: &mut R,
) -> Result<SviFit> {
    config.validate()?;
    let map_params = map_initialize(columns, hyper, &config.map, rng)?;
    let mut q = VariationalPosterior::centered(&map_params, config.init_log_scale);
    let layout = q.layout;
    let p = layout.len();
    let mut eval = LogJointEval::new(layout, columns, hyper.sigma);
    let mut state = AdaDeltaState::new(2 * p, config.rho, config.eps);
    let mut trace = match &config.trace_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "iter,elbo_estimate,step_norm")?;
            Some(w)
        }
        None => None,
    };

    let window = config.convergence_window;
    let mut elbos = Vec::with_capacity(config.max_iters.min(100_000));
    let mut converged = false;
    for iter in 0..config.max_iters {
        let grad = gradient_with(&mut eval, &q, config.n_mc_samples, rng)?;
        let step = state.step(&grad.concat());
        for i in 0..p {
            q.mu[i] += step[i];
            q.log_scale[i] += step[p + i];
        }
        elbos.push(grad.elbo);
        if let Some(w) = trace.as_mut() {
            let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            writeln!(w, "{iter},{},{norm}", grad.elbo)?;
        }
        let t = elbos.len();
        if t >= 2 * window && t % window == 0 {
            let cur = elbos[t - window..].iter().sum::<f64>() / window as f64;
            let prev = elbos[t - 2 * window..t - window].iter().sum::<f64>() / window as f64;
            if (cur - prev).abs() < config.convergence_rel_tol * prev.abs() {
                converged = true;
                break;
            }
        }
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    Ok(SviFit {
        posterior: q,
        map_params,
        converged,
        iterations: elbos.len(),
        elbo_trace: elbos,
    })
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &x) in series.iter().enumerate() {
        acc += x;
        if i >= window {
            acc -= series[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
