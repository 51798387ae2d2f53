use super::prepare::project_splat;
use super::{eval_pixel, ImageBuffer, RasterConfig, Splats};
use crate::geom::Camera;
use crate::real::Real;

/// Untiled oracle renderer.
///
/// Shares only the per-Gaussian projection with the tiled path. Every pixel
/// visits every visible Gaussian in one global (depth, index) order and
/// accumulates in `f64`. The α-skip follows `cfg.thresholds`; early
/// termination is never applied.
pub fn reference_render<T: Real>(
    splats: &Splats<T>,
    cam: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
) -> ImageBuffer<f64> {
    let mut visible: Vec<_> = (0..splats.len())
        .filter_map(|i| project_splat(splats, i, cam, cfg).map(|p| (i, p)))
        .collect();
    visible.sort_by_key(|(i, p)| (p.depth.to_f32().to_bits(), *i));

    let (w, h) = (cam.width as usize, cam.height as usize);
    let alpha_max = T::lit(cfg.alpha_max);
    let alpha_min = cfg.thresholds.then(|| T::lit(cfg.alpha_min));
    let mut img = ImageBuffer {
        width: w,
        height: h,
        rgb: vec![0.0; w * h * 3],
        alpha: vec![0.0; w * h],
        depth: Some(vec![0.0; w * h]),
    };
    let depth = img.depth.as_mut().expect("allocated above");
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (T::lit(x as f64), T::lit(y as f64));
            let mut t = 1.0f64;
            let mut acc = [0.0f64; 3];
            let mut acc_depth = 0.0f64;
            for (_, p) in &visible {
                let Some(hit) = eval_pixel(p, px, py, alpha_max, alpha_min) else {
                    continue;
                };
                let alpha = hit.alpha.to_f64();
                let wgt = alpha * t;
                for ch in 0..3 {
                    acc[ch] += wgt * p.color[ch].to_f64();
                }
                acc_depth += wgt * p.depth.to_f64();
                t *= 1.0 - alpha;
            }
            let pix = y * w + x;
            for ch in 0..3 {
                img.rgb[pix * 3 + ch] = acc[ch] + t * background[ch];
            }
            img.alpha[pix] = 1.0 - t;
            depth[pix] = acc_depth / (1.0 - t).max(cfg.depth_eps);
        }
    }
    img
}
