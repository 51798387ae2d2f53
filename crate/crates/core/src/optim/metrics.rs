use crate::real::Real;

const WINDOW_RADIUS: usize = 5;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Separable 11×11 Gaussian window, truncated at the border and
/// renormalised so every output pixel averages over real pixels only.
struct Window {
    width: usize,
    height: usize,
    taps: [f64; 2 * WINDOW_RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Window {
    fn new(width: usize, height: usize) -> Self {
        let mut taps = [0.0; 2 * WINDOW_RADIUS + 1];
        for (k, t) in taps.iter_mut().enumerate() {
            let d = k as f64 - WINDOW_RADIUS as f64;
            *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        }
        let norms = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|p| {
                    let (lo, hi) = Self::span(p, n);
                    (lo..=hi).map(|q| taps[q + WINDOW_RADIUS - p]).sum()
                })
                .collect()
        };
        Window {
            width,
            height,
            norm_x: norms(width),
            norm_y: norms(height),
            taps,
        }
    }

    fn span(p: usize, n: usize) -> (usize, usize) {
        (p.saturating_sub(WINDOW_RADIUS), (p + WINDOW_RADIUS).min(n - 1))
    }

    fn tap(&self, p: usize, q: usize) -> f64 {
        self.taps[q + WINDOW_RADIUS - p]
    }

    /// Unnormalised truncated convolution of a single plane.
    fn convolve(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let (lo, hi) = Self::span(x, w);
                tmp[y * w + x] = (lo..=hi).map(|q| self.tap(x, q) * row[q]).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let (lo, hi) = Self::span(y, h);
            for q in lo..=hi {
                let t = self.tap(y, q);
                for x in 0..w {
                    out[y * w + x] += t * tmp[q * w + x];
                }
            }
        }
        out
    }

    /// Local weighted mean.
    fn mean(&self, src: &[f64]) -> Vec<f64> {
        let mut out = self.convolve(src);
        self.scale(&mut out);
        out
    }

    /// Transpose of [`Window::mean`].
    fn mean_adjoint(&self, src: &[f64]) -> Vec<f64> {
        let mut s = src.to_vec();
        self.scale(&mut s);
        self.convolve(&s)
    }

    fn scale(&self, buf: &mut [f64]) {
        for y in 0..self.height {
            for x in 0..self.width {
                buf[y * self.width + x] /= self.norm_x[x] * self.norm_y[y];
            }
        }
    }
}

fn plane<T: Real>(img: &[T], channels: usize, c: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(channels).map(|v| v.to_f64()).collect()
}

fn ssim_impl<T: Real>(a: &[T], b: &[T], width: usize, height: usize, channels: usize, want_grad: bool) -> (f64, Vec<f64>) {
    assert_eq!(a.len(), width * height * channels, "image size mismatch");
    assert_eq!(b.len(), a.len(), "image size mismatch");
    let win = Window::new(width, height);
    let n = (width * height * channels) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; a.len()] } else { Vec::new() };
    for c in 0..channels {
        let pa = plane(a, channels, c);
        let pb = plane(b, channels, c);
        let mu_a = win.mean(&pa);
        let mu_b = win.mean(&pb);
        let e_aa = win.mean(&pa.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_bb = win.mean(&pb.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_ab = win.mean(&pa.iter().zip(&pb).map(|(x, y)| x * y).collect::<Vec<_>>());
        let m = pa.len();
        let (mut d_mu, mut d_aa, mut d_ab) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for p in 0..m {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let s_aa = e_aa[p] - ma * ma;
            let s_bb = e_bb[p] - mb * mb;
            let s_ab = e_ab[p] - ma * mb;
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * s_ab + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = s_aa + s_bb + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_da1 = a2 / (b1 * b2);
                let ds_da2 = a1 / (b1 * b2);
                let ds_db1 = -s / b1;
                let ds_db2 = -s / b2;
                // s_aa and s_ab depend on mu_a too.
                d_mu[p] = ds_da1 * 2.0 * mb + ds_da2 * (-2.0 * mb) + ds_db1 * 2.0 * ma + ds_db2 * (-2.0 * ma);
                d_aa[p] = ds_db2;
                d_ab[p] = 2.0 * ds_da2;
            }
        }
        if want_grad {
            let g_mu = win.mean_adjoint(&d_mu);
            let g_aa = win.mean_adjoint(&d_aa);
            let g_ab = win.mean_adjoint(&d_ab);
            for q in 0..m {
                grad[q * channels + c] = (g_mu[q] + 2.0 * pa[q] * g_aa[q] + pb[q] * g_ab[q]) / n;
            }
        }
    }
    (total / n, grad)
}

/// Mean windowed SSIM over pixels and channels of two interleaved images.
pub fn ssim<T: Real>(a: &[T], b: &[T], width: usize, height: usize, channels: usize) -> f64 {
    ssim_impl(a, b, width, height, channels, false).0
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad<T: Real>(a: &[T], b: &[T], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
    ssim_impl(a, b, width, height, channels, true)
}

/// `10 log10(1 / MSE)`; `+∞` for identical inputs.
pub fn psnr<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "image size mismatch");
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn identical_images() {
        let a = noise(8 * 8 * 3, 1);
        assert!((ssim(&a, &a, 8, 8, 3) - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = vec![0.5; 16 * 12];
        let b = vec![0.7; 16 * 12];
        let expected = (2.0 * 0.5 * 0.7 + C1) / (0.25 + 0.49 + C1);
        assert!((ssim(&a, &b, 16, 12, 1) - expected).abs() < 1e-12);
        assert!((expected - 0.94595).abs() < 1e-5);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = noise(20 * 9, 2);
        let b = noise(20 * 9, 3);
        let s = ssim(&a, &b, 20, 9, 1);
        assert!((s - ssim(&b, &a, 20, 9, 1)).abs() < 1e-15);
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn psnr_closed_form() {
        let a = vec![0.5; 100];
        let b = vec![0.6; 100];
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h) = (8, 8);
        let mut a = noise(w * h * 3, 4);
        let b = noise(w * h * 3, 5);
        let (_, g) = ssim_with_grad(&a, &b, w, h, 3);
        let eps = 1e-6;
        for i in (0..a.len()).step_by(7) {
            let orig = a[i];
            a[i] = orig + eps;
            let sp = ssim(&a, &b, w, h, 3);
            a[i] = orig - eps;
            let sm = ssim(&a, &b, w, h, 3);
            a[i] = orig;
            let num = (sp - sm) / (2.0 * eps);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "i={i}: {} vs {num}", g[i]);
        }
    }
}
