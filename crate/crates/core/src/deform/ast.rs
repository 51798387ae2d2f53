use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Linearly annealed Gaussian time noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AstSchedule {
    pub beta: f64,
    pub tau: usize,
    /// Mean spacing of the training timestamps.
    pub delta_t: f64,
    pub enabled: bool,
}

impl AstSchedule {
    /// `β · Δt · max(0, 1 - i/τ)`; zero when disabled.
    pub fn std(&self, iteration: usize) -> f64 {
        if !self.enabled || self.tau == 0 || iteration >= self.tau {
            return 0.0;
        }
        self.beta * self.delta_t * (1.0 - iteration as f64 / self.tau as f64)
    }
}

/// One scalar draw from `N(0, std(i)²)`. Returns exactly zero, without
/// touching `rng`, once the schedule has annealed out.
pub fn ast_sample<R: Rng + ?Sized>(iteration: usize, sched: &AstSchedule, rng: &mut R) -> f64 {
    let std = sched.std(iteration);
    if std == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sched() -> AstSchedule {
        AstSchedule {
            beta: 0.1,
            tau: 20_000,
            delta_t: 0.01,
            enabled: true,
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = sched();
        assert!((s.std(0) - 1e-3).abs() < 1e-18);
        assert_eq!(s.std(10_000), 0.5 * 0.1 * 0.01);
        assert_eq!(s.std(20_000), 0.0);
        assert_eq!(s.std(50_000), 0.0);
        let off = AstSchedule { enabled: false, ..s };
        assert_eq!(off.std(0), 0.0);
    }

    #[test]
    fn annealed_samples_are_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in [20_000, 20_001, 100_000] {
            assert_eq!(ast_sample(i, &sched(), &mut rng), 0.0);
        }
    }

    #[test]
    fn empirical_std_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sched();
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| ast_sample(0, &s, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / s.std(0) - 1.0).abs() < 0.03);
    }
}
