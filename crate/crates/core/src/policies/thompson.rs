use rand::Rng;

use crate::error::Result;
use crate::policies::completion::ColumnCovariance;
use crate::policies::{argmax_discounted, Action, History};
use crate::svi::{sample_params, VariationalPosterior};

/// Thompson Sampling batch: each pick draws fresh factor parameters from `q`,
/// completes the matrix around the observed entries and takes the best
/// discounted entry. Picks already made in the batch count as pulls.
pub fn thompson_select_batch<R: Rng + ?Sized>(
    q: &VariationalPosterior,
    sigma: f64,
    history: &History,
    n_obs: usize,
    rng: &mut R,
) -> Result<Vec<Action>> {
    history.ensure_available(n_obs)?;
    let mut local = history.clone();
    let mut picks = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let params = sample_params(q, sigma, rng)?;
        let cov = ColumnCovariance::new(&params.covariance())?;
        let draw = cov.sample_matrix(&local, rng)?;
        let a = argmax_discounted(&local, &draw)?;
        local.mark_pending(a);
        picks.push(a);
    }
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorParams;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn point_mass(w: DMatrix<f64>, sigma: f64) -> VariationalPosterior {
        let k = w.ncols();
        let p = FactorParams::new(
            w,
            nalgebra::DVector::from_element(k, 1.0),
            1.0,
            1.0,
            1.0,
            sigma,
        )
        .unwrap();
        VariationalPosterior::centered(&p, f64::NEG_INFINITY)
    }

    #[test]
    fn degenerate_posterior_picks_global_max_of_known_matrix() {
        // Rank-1 matrix u v^T with nearly no noise: conditioning on one
        // observed entry per column pins down the rest.
        let u = [1.0, 2.0, 0.5];
        let w = DMatrix::from_column_slice(3, 1, &u);
        let q = point_mass(w, 1e-4);
        let v = [0.3, 1.7];
        let mut h = History::new(3, 2, 0.0).unwrap();
        h.record(Action::new(0, 0), u[0] * v[0]).unwrap();
        h.record(Action::new(0, 1), u[0] * v[1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks = thompson_select_batch(&q, 1e-4, &h, 1, &mut rng).unwrap();
        assert_eq!(picks, vec![Action::new(1, 1)]);
    }

    #[test]
    fn batch_never_repeats_with_zero_discount() {
        let w = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.2, 0.9, 0.4, 0.4]);
        let q = point_mass(w, 0.3);
        let h = History::new(3, 4, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let picks = thompson_select_batch(&q, 0.3, &h, 12, &mut rng).unwrap();
        let distinct: HashSet<_> = picks.iter().collect();
        assert_eq!(distinct.len(), 12);
        assert!(thompson_select_batch(&q, 0.3, &h, 13, &mut rng).is_err());
    }

    #[test]
    fn seeded_batches_are_reproducible() {
        let w = DMatrix::from_row_slice(2, 1, &[0.7, 0.2]);
        let q = point_mass(w, 0.5);
        let mut h = History::new(2, 3, 0.0).unwrap();
        h.record(Action::new(1, 2), 0.4).unwrap();
        let a = thompson_select_batch(&q, 0.5, &h, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = thompson_select_batch(&q, 0.5, &h, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
