use rayon::prelude::*;

use super::{eval_pixel, ImageBuffer, RasterWorkspace};
use crate::real::Real;

struct TileOutput<T> {
    rgb: Vec<T>,
    depth: Vec<T>,
    alpha: Vec<T>,
    transmittance: Vec<T>,
    last: Vec<u32>,
}

/// Front-to-back alpha compositing of every tile. Retains the final
/// transmittance and walk length per pixel in `ws` for the backward pass.
pub fn rasterize_forward<T: Real>(ws: &mut RasterWorkspace<T>, background: [T; 3]) -> ImageBuffer<T> {
    let cfg = ws.config;
    let alpha_max = T::lit(cfg.alpha_max);
    let alpha_min = cfg.thresholds.then(|| T::lit(cfg.alpha_min));
    let t_min = T::lit(cfg.transmittance_min);
    let depth_eps = T::lit(cfg.depth_eps);

    let ws_ref = &*ws;
    let tiles: Vec<TileOutput<T>> = (0..ws.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = ws_ref.tile_rect(tile);
            let list = ws_ref.tile_entries(tile);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOutput {
                rgb: Vec::with_capacity(n * 3),
                depth: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                transmittance: Vec::with_capacity(n),
                last: Vec::with_capacity(n),
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (T::lit(x as f64), T::lit(y as f64));
                    let mut t = T::one();
                    let mut acc = [T::zero(); 3];
                    let mut acc_depth = T::zero();
                    let mut last = 0u32;
                    for (k, &gi) in list.iter().enumerate() {
                        let p = ws_ref.projected[gi as usize]
                            .as_ref()
                            .expect("binned Gaussians are visible");
                        let Some(hit) = eval_pixel(p, px, py, alpha_max, alpha_min) else {
                            continue;
                        };
                        let w = hit.alpha * t;
                        for ch in 0..3 {
                            acc[ch] += w * p.color[ch];
                        }
                        acc_depth += w * p.depth;
                        t *= T::one() - hit.alpha;
                        last = k as u32 + 1;
                        if alpha_min.is_some() && t < t_min {
                            break;
                        }
                    }
                    for ch in 0..3 {
                        out.rgb.push(acc[ch] + t * background[ch]);
                    }
                    let acc_alpha = T::one() - t;
                    out.depth.push(acc_depth / acc_alpha.max(depth_eps));
                    out.alpha.push(acc_alpha);
                    out.transmittance.push(t);
                    out.last.push(last);
                }
            }
            out
        })
        .collect();

    let (w, h) = (ws.width, ws.height);
    let mut img = ImageBuffer {
        width: w,
        height: h,
        rgb: vec![T::zero(); w * h * 3],
        alpha: vec![T::zero(); w * h],
        depth: Some(vec![T::zero(); w * h]),
    };
    let mut final_t = vec![T::one(); w * h];
    let mut last_entry = vec![0u32; w * h];
    let depth = img.depth.as_mut().expect("allocated above");
    for (tile, out) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = ws.tile_rect(tile);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let pix = y * w + x;
                img.rgb[pix * 3..pix * 3 + 3].copy_from_slice(&out.rgb[k * 3..k * 3 + 3]);
                img.alpha[pix] = out.alpha[k];
                depth[pix] = out.depth[k];
                final_t[pix] = out.transmittance[k];
                last_entry[pix] = out.last[k];
                k += 1;
            }
        }
    }
    ws.background = background;
    ws.final_transmittance = final_t;
    ws.last_entry = last_entry;
    img
}
