use std::ops::Range;

use nalgebra::{Matrix2, Vector3};

use super::{eval_pixel, RasterConfig, Splats};
use crate::geom::{
    build_covariance, eval_sh, project_covariance, project_point, projection_jacobian, Camera,
};
use crate::real::Real;

/// Screen-space footprint of one visible Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedSplat<T: Real> {
    pub mean: [T; 2],
    pub cov2d: Matrix2<T>,
    /// Inverse 2D covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [T; 3],
    pub depth: T,
    pub radius: T,
    pub opacity: T,
    pub color: [T; 3],
    pub color_clamped: [bool; 3],
    /// Inclusive tile rectangle `[x0, x1] × [y0, y1]`.
    pub tiles: [usize; 4],
}

/// Binned, depth-sorted Gaussians for one camera plus the per-pixel state
/// the backward pass needs.
#[derive(Clone, Debug)]
pub struct RasterWorkspace<T: Real> {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub config: RasterConfig,
    pub projected: Vec<Option<ProjectedSplat<T>>>,
    /// Gaussian indices ordered by (tile, depth, index).
    pub entries: Vec<u32>,
    pub tile_ranges: Vec<Range<usize>>,
    pub background: [T; 3],
    /// Retained by the forward pass.
    pub final_transmittance: Vec<T>,
    /// Number of tile-list entries each pixel walked before stopping.
    pub last_entry: Vec<u32>,
}

impl<T: Real> RasterWorkspace<T> {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn visible_count(&self) -> usize {
        self.projected.iter().filter(|p| p.is_some()).count()
    }

    pub fn tile_entries(&self, tile: usize) -> &[u32] {
        &self.entries[self.tile_ranges[tile].clone()]
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive upper bounds) of a tile.
    pub fn tile_rect(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }

    /// Hash of every discrete decision taken while rasterizing: tile lists,
    /// how far each pixel walked, which list entries touch each pixel and
    /// whether their opacity or colour was clamped. Two renders with equal
    /// fingerprints are on the same smooth branch of the image function.
    ///
    /// Costs a full pass over every pixel's list; meant for gradient
    /// checking, not the training loop.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for r in &self.tile_ranges {
            eat(r.start as u64);
            eat(r.end as u64);
        }
        for &e in &self.entries {
            eat(e as u64);
        }
        for &l in &self.last_entry {
            eat(l as u64);
        }
        for p in self.projected.iter().flatten() {
            eat(p.color_clamped.iter().fold(0, |acc, &c| acc * 2 + c as u64));
        }
        let alpha_max = T::lit(self.config.alpha_max);
        let alpha_min = self.config.thresholds.then(|| T::lit(self.config.alpha_min));
        for tile in 0..self.tile_count() {
            let (x0, y0, x1, y1) = self.tile_rect(tile);
            let list = self.tile_entries(tile);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (T::lit(x as f64), T::lit(y as f64));
                    for &gi in list {
                        let p = self.projected[gi as usize].as_ref().expect("binned Gaussians are visible");
                        eat(match eval_pixel(p, px, py, alpha_max, alpha_min) {
                            None => 0,
                            Some(hit) if hit.clamped => 2,
                            Some(_) => 1,
                        });
                    }
                }
            }
        }
        h
    }
}

/// Projects a single Gaussian; `None` when culled.
pub(crate) fn project_splat<T: Real>(
    splats: &Splats<T>,
    i: usize,
    cam: &Camera,
    cfg: &RasterConfig,
) -> Option<ProjectedSplat<T>> {
    let pos = Vector3::from(splats.positions[i]);
    let proj = project_point(&pos, cam, T::lit(cfg.z_near))?;
    let cov3d = build_covariance(&splats.rotations[i], &Vector3::from(splats.scales[i])).ok()?;
    let jac = projection_jacobian(&proj.p_cam, T::lit(cam.fx), T::lit(cam.fy));
    let cov2d = project_covariance(&cov3d, &cam.rotation::<T>(), &jac, T::lit(cfg.dilation));
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > T::lit(cfg.min_cov_det)) {
        return None;
    }
    let inv_det = T::one() / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];
    let mid = T::lit(0.5) * (a + c);
    let disc = (mid * mid - det).max(T::zero()).sqrt();
    let lambda_max = mid + disc;
    let radius = T::lit(cfg.radius_sigmas) * lambda_max.sqrt();

    let (w, h) = (cam.width as i64, cam.height as i64);
    let x0 = (proj.uv.x - radius).ceil().to_f64().max(0.0);
    let x1 = (proj.uv.x + radius).floor().to_f64().min((w - 1) as f64);
    let y0 = (proj.uv.y - radius).ceil().to_f64().max(0.0);
    let y1 = (proj.uv.y + radius).floor().to_f64().min((h - 1) as f64);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let ts = cfg.tile_size;
    let tiles = [
        x0 as usize / ts,
        x1 as usize / ts,
        y0 as usize / ts,
        y1 as usize / ts,
    ];

    let dir = pos - cam.center().map(T::lit);
    let (color, color_clamped) = eval_sh(splats.sh_row(i), &dir.normalize(), splats.sh_degree);
    Some(ProjectedSplat {
        mean: [proj.uv.x, proj.uv.y],
        cov2d,
        conic,
        depth: proj.depth,
        radius,
        opacity: splats.opacities[i],
        color,
        color_clamped,
        tiles,
    })
}

/// Projects, culls and bins every Gaussian for `cam`.
pub fn prepare<T: Real>(splats: &Splats<T>, cam: &Camera, cfg: &RasterConfig) -> RasterWorkspace<T> {
    use rayon::prelude::*;

    let width = cam.width as usize;
    let height = cam.height as usize;
    let ts = cfg.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);

    let projected: Vec<Option<ProjectedSplat<T>>> = (0..splats.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| project_splat(splats, i, cam, cfg))
        .collect();

    let mut keys: Vec<(u64, u32)> = Vec::new();
    for (i, p) in projected.iter().enumerate() {
        let Some(p) = p else { continue };
        let depth_bits = p.depth.to_f32().to_bits() as u64;
        for ty in p.tiles[2]..=p.tiles[3] {
            for tx in p.tiles[0]..=p.tiles[1] {
                let tile = (ty * tiles_x + tx) as u64;
                keys.push(((tile << 32) | depth_bits, i as u32));
            }
        }
    }
    keys.par_sort_unstable();

    let n_tiles = tiles_x * tiles_y;
    let mut tile_ranges = vec![0..0; n_tiles];
    let mut start = 0;
    while start < keys.len() {
        let tile = (keys[start].0 >> 32) as usize;
        let mut end = start;
        while end < keys.len() && (keys[end].0 >> 32) as usize == tile {
            end += 1;
        }
        tile_ranges[tile] = start..end;
        start = end;
    }
    let entries = keys.into_iter().map(|(_, i)| i).collect();

    RasterWorkspace {
        width,
        height,
        tile_size: ts,
        tiles_x,
        tiles_y,
        config: *cfg,
        projected,
        entries,
        tile_ranges,
        background: [T::zero(); 3],
        final_transmittance: Vec::new(),
        last_entry: Vec::new(),
    }
}
