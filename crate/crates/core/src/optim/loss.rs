use super::metrics::ssim_with_grad;
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;
use crate::real::Real;

/// Default weight of the D-SSIM term; L1 gets the remainder.
pub const SSIM_WEIGHT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T: Real> {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `dL/d render`, interleaved RGB.
    pub grad: Vec<T>,
}

/// `(1 - λ) · mean|r - t| + λ · (1 - SSIM(r, t))` with its analytic gradient.
pub fn photometric_loss<T: Real>(render: &ImageBuffer<T>, target: &ImageBuffer<T>, lambda: f64) -> Result<LossValue<T>> {
    if !render.same_shape(target) {
        return Err(Error::InvalidInput(format!(
            "render is {}×{} but target is {}×{}",
            render.width, render.height, target.width, target.height
        )));
    }
    let n = render.rgb.len() as f64;
    let (s, g_ssim) = ssim_with_grad(&render.rgb, &target.rgb, render.width, render.height, 3);
    let mut l1 = 0.0;
    let w1 = (1.0 - lambda) / n;
    let grad = render
        .rgb
        .iter()
        .zip(&target.rgb)
        .zip(&g_ssim)
        .map(|((r, t), gs)| {
            let d = r.to_f64() - t.to_f64();
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            T::lit(w1 * sign - lambda * gs)
        })
        .collect();
    let l1 = l1 / n;
    Ok(LossValue {
        total: (1.0 - lambda) * l1 + lambda * (1.0 - s),
        l1,
        ssim: s,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize) -> f64) -> ImageBuffer<f64> {
        ImageBuffer::from_rgb(w, h, (0..w * h * 3).map(f).collect())
    }

    #[test]
    fn zero_when_equal() {
        let a = img(8, 8, |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let l = photometric_loss(&a, &a, SSIM_WEIGHT).unwrap();
        assert!(l.total.abs() < 1e-12);
    }

    #[test]
    fn mixes_terms() {
        let a = img(8, 8, |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let b = img(8, 8, |i| (i as f64 * 0.11).cos() * 0.4 + 0.5);
        let l = photometric_loss(&a, &b, SSIM_WEIGHT).unwrap();
        assert!((l.total - (0.8 * l.l1 + 0.2 * (1.0 - l.ssim))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = img(8, 8, |_| 0.5);
        let b = img(8, 4, |_| 0.5);
        assert!(photometric_loss(&a, &b, SSIM_WEIGHT).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut a = img(8, 8, |i| (i as f64 * 0.37).sin() * 0.45 + 0.5);
        let b = img(8, 8, |i| (i as f64 * 0.11).cos() * 0.4 + 0.5);
        let l = photometric_loss(&a, &b, SSIM_WEIGHT).unwrap();
        let h = 1e-7;
        for i in (0..a.rgb.len()).step_by(5) {
            let orig = a.rgb[i];
            a.rgb[i] = orig + h;
            let lp = photometric_loss(&a, &b, SSIM_WEIGHT).unwrap().total;
            a.rgb[i] = orig - h;
            let lm = photometric_loss(&a, &b, SSIM_WEIGHT).unwrap().total;
            a.rgb[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - l.grad[i]).abs() / num.abs().max(l.grad[i].abs()).max(1e-6);
            assert!(rel < 1e-3, "i={i}: {} vs {num}", l.grad[i]);
        }
    }
}
