/// Log-linear interpolation `lr0 · (lr_end / lr0)^(step / total)`; `step`
/// is clamped to `[0, total]`.
pub fn exp_lr(step: usize, total: usize, lr0: f64, lr_end: f64) -> f64 {
    if total == 0 || lr0 == lr_end {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    (lr0.ln() * (1.0 - t) + lr_end.ln() * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert!((exp_lr(0, 1000, 8e-4, 1.6e-6) - 8e-4).abs() < 1e-18);
        assert!((exp_lr(1000, 1000, 8e-4, 1.6e-6) - 1.6e-6).abs() < 1e-18);
        let mid = exp_lr(500, 1000, 8e-4, 1.6e-6);
        assert!((mid - (8e-4f64 * 1.6e-6).sqrt()).abs() < 1e-15);
        assert!((mid - 3.578e-5).abs() < 1e-8);
        assert_eq!(exp_lr(5000, 1000, 8e-4, 1.6e-6), exp_lr(1000, 1000, 8e-4, 1.6e-6));
        assert_eq!(exp_lr(37, 100, 0.3, 0.3), 0.3);
    }

    #[test]
    fn monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = exp_lr(s, 100, 1e-2, 1e-5);
            assert!(lr < prev);
            prev = lr;
        }
    }
}
