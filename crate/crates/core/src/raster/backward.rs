use nalgebra::{Matrix2, Vector3};
use rayon::prelude::*;

use super::{eval_pixel, RasterWorkspace, Splats};
use crate::geom::{
    build_covariance, build_covariance_backward, eval_sh_backward, project_covariance_backward,
    projection_jacobian, Camera,
};
use crate::real::Real;

/// Gradients of a scalar loss w.r.t. every rasterizer input.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrads<T: Real> {
    pub positions: Vec<[T; 3]>,
    /// W.r.t. the unnormalised quaternions in [`Splats::rotations`].
    pub rotations: Vec<[T; 4]>,
    /// W.r.t. the linear scales.
    pub scales: Vec<[T; 3]>,
    /// W.r.t. σ itself (not its logit).
    pub opacities: Vec<T>,
    pub sh: Vec<[T; 3]>,
    /// W.r.t. the projected pixel-space centres.
    pub mean2d: Vec<[T; 2]>,
    pub visible: Vec<bool>,
}

impl<T: Real> SplatGrads<T> {
    pub fn zeros(n: usize, sh_stride: usize) -> Self {
        SplatGrads {
            positions: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            scales: vec![[T::zero(); 3]; n],
            opacities: vec![T::zero(); n],
            sh: vec![[T::zero(); 3]; n * sh_stride],
            mean2d: vec![[T::zero(); 2]; n],
            visible: vec![false; n],
        }
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
}

impl<T: Real> ScreenGrad<T> {
    fn zero() -> Self {
        ScreenGrad {
            mean: [T::zero(); 2],
            conic: [T::zero(); 3],
            opacity: T::zero(),
            color: [T::zero(); 3],
        }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Analytic gradients of the forward render given `dL/dC` per pixel
/// (interleaved RGB, same layout as the image).
///
/// Each pixel is replayed back to front from its retained final
/// transmittance; per-tile partial sums are reduced in tile order so the
/// result does not depend on the number of worker threads.
pub fn rasterize_backward<T: Real>(
    ws: &RasterWorkspace<T>,
    splats: &Splats<T>,
    cam: &Camera,
    image_grad: &[T],
) -> SplatGrads<T> {
    assert_eq!(image_grad.len(), ws.width * ws.height * 3);
    assert_eq!(ws.final_transmittance.len(), ws.width * ws.height, "forward pass not run");
    let cfg = ws.config;
    let alpha_max = T::lit(cfg.alpha_max);
    let alpha_min = cfg.thresholds.then(|| T::lit(cfg.alpha_min));
    let half = T::lit(0.5);
    let bg = ws.background;

    let per_tile: Vec<Vec<ScreenGrad<T>>> = (0..ws.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = ws.tile_rect(tile);
            let list = ws.tile_entries(tile);
            let mut grads = vec![ScreenGrad::zero(); list.len()];
            for y in y0..y1 {
                for x in x0..x1 {
                    let pix = y * ws.width + x;
                    let dl_dc = [image_grad[pix * 3], image_grad[pix * 3 + 1], image_grad[pix * 3 + 2]];
                    if dl_dc.iter().all(|g| *g == T::zero()) {
                        continue;
                    }
                    let (px, py) = (T::lit(x as f64), T::lit(y as f64));
                    let mut t = ws.final_transmittance[pix];
                    let mut behind = bg;
                    let last = ws.last_entry[pix] as usize;
                    for k in (0..last).rev() {
                        let gi = list[k] as usize;
                        let p = ws.projected[gi].as_ref().expect("binned Gaussians are visible");
                        let Some(hit) = eval_pixel(p, px, py, alpha_max, alpha_min) else {
                            continue;
                        };
                        let one_minus = T::one() - hit.alpha;
                        t /= one_minus;
                        let w = t * hit.alpha;
                        let g = &mut grads[k];
                        let mut dl_dalpha = T::zero();
                        for ch in 0..3 {
                            g.color[ch] += w * dl_dc[ch];
                            dl_dalpha += (p.color[ch] - behind[ch]) * dl_dc[ch];
                            behind[ch] = hit.alpha * p.color[ch] + one_minus * behind[ch];
                        }
                        dl_dalpha *= t;
                        if hit.clamped {
                            continue;
                        }
                        g.opacity += hit.gauss * dl_dalpha;
                        let dl_dpower = p.opacity * hit.gauss * dl_dalpha;
                        let (dx, dy) = (hit.dx, hit.dy);
                        g.mean[0] += dl_dpower * (p.conic[0] * dx + p.conic[1] * dy);
                        g.mean[1] += dl_dpower * (p.conic[1] * dx + p.conic[2] * dy);
                        g.conic[0] -= half * dx * dx * dl_dpower;
                        g.conic[1] -= dx * dy * dl_dpower;
                        g.conic[2] -= half * dy * dy * dl_dpower;
                    }
                }
            }
            grads
        })
        .collect();

    let n = splats.len();
    let mut screen = vec![ScreenGrad::zero(); n];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (g, &gi) in grads.iter().zip(ws.tile_entries(tile)) {
            screen[gi as usize].add(g);
        }
    }

    let stride = splats.sh_stride;
    let cam_rot = cam.rotation::<T>();
    let center = cam.center().map(T::lit);
    let (fx, fy) = (T::lit(cam.fx), T::lit(cam.fy));

    struct Row<T: Real> {
        pos: [T; 3],
        rot: [T; 4],
        scale: [T; 3],
        sh: Vec<[T; 3]>,
    }
    let rows: Vec<Option<Row<T>>> = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            let p = ws.projected[i].as_ref()?;
            let sg = &screen[i];
            let pos = Vector3::from(splats.positions[i]);
            let scale = Vector3::from(splats.scales[i]);
            let q = splats.rotations[i];

            // Colour → SH coefficients and view direction.
            let mut d_sh = vec![[T::zero(); 3]; stride];
            let dir = pos - center;
            let d_dir = eval_sh_backward(
                splats.sh_row(i),
                &dir,
                splats.sh_degree,
                p.color_clamped,
                sg.color,
                &mut d_sh,
            );

            // Conic → 2D covariance: dΣ' = -A G A with the off-diagonal
            // gradient shared between the two symmetric entries.
            let a = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
            let g_conic = Matrix2::new(sg.conic[0], half * sg.conic[1], half * sg.conic[1], sg.conic[2]);
            let d_cov2d = -(a * g_conic * a);

            let p_cam = cam_rot * pos + cam.translation::<T>();
            let cov3d = build_covariance(&q, &scale).expect("visible Gaussians have valid rotations");
            let (d_cov3d, mut d_pcam) =
                project_covariance_backward(&cov3d, &cam_rot, &p_cam, fx, fy, &d_cov2d);
            let jac = projection_jacobian(&p_cam, fx, fy);
            d_pcam += jac.transpose() * nalgebra::Vector2::new(sg.mean[0], sg.mean[1]);
            let d_pos = cam_rot.transpose() * d_pcam + d_dir;

            let (d_q, d_scale) = build_covariance_backward(&q, &scale, &d_cov3d);
            Some(Row {
                pos: d_pos.into(),
                rot: d_q,
                scale: d_scale.into(),
                sh: d_sh,
            })
        })
        .collect();

    let mut out = SplatGrads::zeros(n, stride);
    for (i, row) in rows.into_iter().enumerate() {
        let Some(row) = row else { continue };
        out.positions[i] = row.pos;
        out.rotations[i] = row.rot;
        out.scales[i] = row.scale;
        out.opacities[i] = screen[i].opacity;
        out.mean2d[i] = screen[i].mean;
        out.sh[i * stride..(i + 1) * stride].copy_from_slice(&row.sh);
        out.visible[i] = true;
    }
    out
}
