// Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seqmc::model::{FactorParams, PartialColumn};
use seqmc::policies::{Action, History, ThetaSample};
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `A A^T + 0.1 I` with standard normal `A`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Joint Gaussian draws (one per column) via nalgebra's Cholesky.
pub fn joint_samples<R: Rng + ?Sized>(cov: &DMatrix<f64>, n: usize, rng: &mut R) -> DMatrix<f64> {
    let l = cov.clone().cholesky().expect("spd").l();
    let z = DMatrix::from_fn(cov.nrows(), n, |_, _| normal(rng));
    l * z
}

/// Monte Carlo conditioning by regression: for Gaussian draws the least
/// squares fit of `x_U` on `x_O` recovers `S_UO S_OO^{-1}` and the residual
/// covariance recovers the Schur complement.
pub fn mc_conditional<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    observed: &[usize],
    values: &[f64],
    n: usize,
    rng: &mut R,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = cov.nrows();
    let unobserved: Vec<usize> = (0..d).filter(|i| !observed.contains(i)).collect();
    let x = joint_samples(cov, n, rng);
    let xo = x.select_rows(observed);
    let xu = x.select_rows(&unobserved);
    if observed.is_empty() {
        let c = &xu * xu.transpose() / n as f64;
        return (DVector::zeros(unobserved.len()), c);
    }
    let soo = &xo * xo.transpose();
    let suo = &xu * xo.transpose();
    let b = suo * soo.try_inverse().expect("invertible");
    let resid = &xu - &b * &xo;
    let c = &resid * resid.transpose() / (n - observed.len()) as f64;
    (b * DVector::from_column_slice(values), c)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if b.norm() == 0.0 {
        return a.norm();
    }
    (a - b).norm() / b.norm()
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log joint by direct summation: every prior factor separately, then one
/// multivariate normal per column on its observed block.
pub fn naive_log_joint(p: &FactorParams, columns: &[PartialColumn]) -> f64 {
    let (d, k) = (p.w.nrows(), p.w.ncols());
    let mut total = 0.0;
    for x in [p.gamma, p.gamma0, p.c0] {
        total += gamma_lpdf(x, 1.0, 1.0);
    }
    for j in 0..k {
        total += gamma_lpdf(p.r[j], p.gamma0 / k as f64, p.c0);
        for i in 0..d {
            total += gamma_lpdf(p.w[(i, j)], p.gamma * p.r[j], p.gamma);
        }
    }
    let cov = &p.w * p.w.transpose() + DMatrix::identity(d, d) * (p.sigma * p.sigma);
    for c in columns {
        let o = c.observed_idx();
        if o.is_empty() {
            continue;
        }
        let s = cov.select_rows(o).select_columns(o);
        let x = DVector::from_column_slice(c.observed_vals());
        let det = s.determinant();
        let quad = (x.transpose() * s.try_inverse().unwrap() * &x)[0];
        total += -0.5 * (o.len() as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
    }
    total
}

/// Two equally likely covariances on a 3-row column with row 0 observed at
/// 1.0; rows 1 and 2 are nearly determined by it with opposite signs under
/// the two samples, so observing either reveals the optimal action.
pub fn revealing_toy(w0: f64) -> (Vec<ThetaSample>, History) {
    let make = |s: f64| {
        let v = [1.0, 0.9 * s, -0.9 * s];
        let mut c = DMatrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        c[(1, 1)] += 1e-4;
        c[(2, 2)] += 1e-4;
        c
    };
    let samples = vec![
        ThetaSample {
            cov: make(1.0),
            weight: w0,
        },
        ThetaSample {
            cov: make(-1.0),
            weight: 1.0 - w0,
        },
    ];
    let mut h = History::new(3, 1, 0.0).unwrap();
    h.record(Action::new(0, 0), 1.0).unwrap();
    (samples, h)
}

/// Minimizer of `(sum pi_a regret_a)^2 / (sum pi_a info_a)` over a uniform
/// grid on the two-action simplex; returns `(p, value)` with `p` the weight
/// of the first action.
pub fn simplex_grid_min(regret: [f64; 2], info: [f64; 2], points: usize) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 0..points {
        let p = i as f64 / (points - 1) as f64;
        let r = p * regret[0] + (1.0 - p) * regret[1];
        let g = p * info[0] + (1.0 - p) * info[1];
        let v = if r == 0.0 {
            0.0
        } else if g > 0.0 {
            r * r / g
        } else {
            f64::INFINITY
        };
        if v < best.1 {
            best = (p, v);
        }
    }
    best
}

/// Standard normal CDF via the error function.
pub fn phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Worst relative error of `conditional_gaussian` against regression Monte
/// Carlo over `cases` random 4x4 covariances, as `(mean_err, cov_err)`.
pub fn conditional_vs_monte_carlo(cases: usize, n: usize, seed: u64) -> (f64, f64) {
    use rand::seq::index;
    let mut r = rng(seed);
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let cov = random_spd(4, &mut r);
        let n_obs = r.random_range(1..4);
        let mut obs = index::sample(&mut r, 4, n_obs).into_vec();
        obs.sort_unstable();
        let vals: Vec<f64> = obs
            .iter()
            .map(|&i| cov[(i, i)].sqrt() * normal(&mut r))
            .collect();
        let col = PartialColumn::new(obs.clone(), vals.clone(), 4).unwrap();
        let cg = seqmc::model::conditional_gaussian(&cov, &col).unwrap();
        let (m, c) = mc_conditional(&cov, &obs, &vals, n, &mut r);
        // The mean is compared on the scale of the conditional spread when
        // the observed values happen to pull it close to zero.
        let scale = cg.mean.norm().max(cg.cov.trace().sqrt());
        worst_mean = worst_mean.max((&m - &cg.mean).norm() / scale);
        worst_cov = worst_cov.max(rel_err_mat(&c, &cg.cov));
    }
    (worst_mean, worst_cov)
}

/// Small D=2, K=1 problem for gradient checks: three partially observed
/// columns and a posterior centred near plausible values.
pub fn gradient_problem() -> (
    Vec<PartialColumn>,
    seqmc::svi::ModelHyper,
    seqmc::svi::VariationalPosterior,
) {
    let columns = vec![
        PartialColumn::new(vec![0, 1], vec![0.8, -0.3], 2).unwrap(),
        PartialColumn::new(vec![1], vec![1.1], 2).unwrap(),
        PartialColumn::new(vec![0], vec![-0.6], 2).unwrap(),
    ];
    let hyper = seqmc::svi::ModelHyper::new(1, 0.5).unwrap();
    let layout = seqmc::model::ParamLayout::new(2, 1).unwrap();
    let mu = vec![-0.2, 0.1, 0.3, 0.5, -0.4, 0.2];
    let log_scale = vec![-1.0, -1.2, -0.8, -1.5, -1.1, -0.9];
    let q = seqmc::svi::VariationalPosterior::new(layout, mu, log_scale).unwrap();
    (columns, hyper, q)
}

/// Per-coordinate relative error of `elbo_gradient_estimate` against
/// central differences of `elbo_estimate` under common random numbers.
pub fn gradient_fd_errors(n: usize, step: f64, seed: u64) -> Vec<f64> {
    use seqmc::svi::{elbo_estimate, elbo_gradient_estimate, VariationalPosterior};
    let (columns, hyper, q) = gradient_problem();
    let grad = elbo_gradient_estimate(&q, &columns, &hyper, n, &mut rng(seed))
        .unwrap()
        .concat();
    let p = q.mu().len();
    let elbo_at = |mu: Vec<f64>, ls: Vec<f64>| {
        let q = VariationalPosterior::new(q.layout(), mu, ls).unwrap();
        elbo_estimate(&q, &columns, &hyper, n, &mut rng(seed)).unwrap()
    };
    (0..2 * p)
        .map(|i| {
            let shifted = |h: f64| {
                let (mut mu, mut ls) = (q.mu().to_vec(), q.log_scale().to_vec());
                if i < p {
                    mu[i] += h;
                } else {
                    ls[i - p] += h;
                }
                elbo_at(mu, ls)
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            (fd - grad[i]).abs() / grad[i].abs().max(1e-12)
        })
        .collect()
}
