/// Per-coordinate AdaDelta accumulators.
///
/// `step` returns the unsigned-by-convention update `g * RMS[dx] / RMS[g]`;
/// the caller adds it for ascent or subtracts it for descent.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub eps: f64,
    acc_grad_sq: Vec<f64>,
    acc_step_sq: Vec<f64>,
}

impl AdaDeltaState {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(n_coords: usize, rho: f64, eps: f64) -> Self {
        assert!(rho > 0.0 && rho < 1.0, "AdaDelta rho must lie in (0, 1)");
        assert!(eps > 0.0, "AdaDelta eps must be positive");
        Self {
            rho,
            eps,
            acc_grad_sq: vec![0.0; n_coords],
            acc_step_sq: vec![0.0; n_coords],
        }
    }

    pub fn len(&self) -> usize {
        self.acc_grad_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc_grad_sq.is_empty()
    }

    pub fn acc_grad_sq(&self) -> &[f64] {
        &self.acc_grad_sq
    }

    pub fn acc_step_sq(&self) -> &[f64] {
        &self.acc_step_sq
    }

    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(
            grad.len(),
            self.len(),
            "gradient and AdaDelta state cover different coordinates"
        );
        let (rho, eps) = (self.rho, self.eps);
        grad.iter()
            .zip(self.acc_grad_sq.iter_mut())
            .zip(self.acc_step_sq.iter_mut())
            .map(|((&g, acc_g), acc_dx)| {
                *acc_g = rho * *acc_g + (1.0 - rho) * g * g;
                let dx = g * (*acc_dx + eps).sqrt() / (*acc_g + eps).sqrt();
                *acc_dx = rho * *acc_dx + (1.0 - rho) * dx * dx;
                dx
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_from_fresh_state() {
        let mut s = AdaDeltaState::new(1, 0.95, 1e-6);
        let step = s.step(&[1.0])[0];
        let expected = 1e-6f64.sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((step - expected).abs() < 1e-15);
        assert!((step - 0.004472).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_decays_accumulators() {
        let mut s = AdaDeltaState::new(2, 0.95, 1e-6);
        s.step(&[1.0, -2.0]);
        let (g0, d0) = (s.acc_grad_sq().to_vec(), s.acc_step_sq().to_vec());
        let step = s.step(&[0.0, 0.0]);
        assert_eq!(step, vec![0.0, 0.0]);
        for i in 0..2 {
            assert!((s.acc_grad_sq()[i] - 0.95 * g0[i]).abs() < 1e-18);
            assert!((s.acc_step_sq()[i] - 0.95 * d0[i]).abs() < 1e-18);
        }
    }

    #[test]
    fn fresh_step_is_nearly_scale_free() {
        let g = 0.37;
        let mut a = AdaDeltaState::new(1, 0.95, 1e-6);
        let mut b = AdaDeltaState::new(1, 0.95, 1e-6);
        let sa = a.step(&[g])[0];
        let sb = b.step(&[1e3 * g])[0];
        assert!((sb / sa - 1.0).abs() < 1e-4, "ratio {}", sb / sa);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn bounded_gradients_never_produce_non_finite_state(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut s = AdaDeltaState::new(4, 0.95, 1e-6);
            for _ in 0..10_000 {
                let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1e6..=1e6)).collect();
                let step = s.step(&g);
                prop_assert!(step.iter().all(|x| x.is_finite()));
            }
            prop_assert!(s.acc_grad_sq().iter().chain(s.acc_step_sq()).all(|x| x.is_finite() && *x >= 0.0));
        }
    }
}
