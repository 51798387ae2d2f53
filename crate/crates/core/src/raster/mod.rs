//! Tile-based differentiable rasterizer.
//!
//! [`prepare`] projects and bins Gaussians into 16×16 tiles,
//! [`rasterize_forward`] alpha-composites them front to back and
//! [`rasterize_backward`] replays each pixel back to front from the retained
//! final transmittance. [`reference_render`] is the untiled oracle.

mod backward;
mod forward;
mod prepare;
mod reference;

pub use backward::{rasterize_backward, SplatGrads};
pub use forward::rasterize_forward;
pub use prepare::{prepare, ProjectedSplat, RasterWorkspace};
pub use reference::reference_render;

use crate::geom::{GaussianCloud, COV2D_DILATION, Z_NEAR};
use crate::real::Real;

/// Rasterizer constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Support half-width in standard deviations of the major axis.
    pub radius_sigmas: f64,
    /// Contributions with α below this are skipped (when `thresholds`).
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Blending stops once transmittance drops below this (when `thresholds`).
    pub transmittance_min: f64,
    pub dilation: f64,
    pub z_near: f64,
    pub depth_eps: f64,
    pub min_cov_det: f64,
    /// Enables the α-skip and early-termination shortcuts.
    pub thresholds: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            radius_sigmas: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            dilation: COV2D_DILATION,
            z_near: Z_NEAR,
            depth_eps: 1e-6,
            min_cov_det: 1e-12,
            thresholds: true,
        }
    }
}

impl RasterConfig {
    pub fn exact() -> Self {
        RasterConfig {
            thresholds: false,
            ..Default::default()
        }
    }
}

/// Activated per-Gaussian parameters as consumed by the rasterizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Splats<T: Real> {
    pub positions: Vec<[T; 3]>,
    /// Unnormalised; normalised during projection.
    pub rotations: Vec<[T; 4]>,
    /// Linear, strictly positive.
    pub scales: Vec<[T; 3]>,
    /// In (0, 1).
    pub opacities: Vec<T>,
    /// `N × sh_stride` rows of RGB coefficients.
    pub sh: Vec<[T; 3]>,
    pub sh_stride: usize,
    /// Active degree used for colour evaluation (≤ the stored degree).
    pub sh_degree: usize,
}

impl<T: Real> Splats<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_row(&self, i: usize) -> &[[T; 3]] {
        &self.sh[i * self.sh_stride..(i + 1) * self.sh_stride]
    }

    /// Canonical cloud with no deformation applied.
    pub fn from_cloud(cloud: &GaussianCloud<T>, active_degree: usize) -> Self {
        let n = cloud.len();
        let stride = cloud.sh_stride();
        let mut sh = vec![[T::zero(); 3]; n * stride];
        for i in 0..n {
            cloud.sh_coeffs_into(i, &mut sh[i * stride..(i + 1) * stride]);
        }
        Splats {
            positions: cloud.positions.clone(),
            rotations: cloud.rotations.clone(),
            scales: (0..n).map(|i| cloud.scale(i)).collect(),
            opacities: (0..n).map(|i| cloud.opacity(i)).collect(),
            sh,
            sh_stride: stride,
            sh_degree: active_degree.min(cloud.sh_degree),
        }
    }
}

/// Rendered image: interleaved RGB, accumulated alpha and optional depth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T: Real = f32> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<T>,
    pub alpha: Vec<T>,
    pub depth: Option<Vec<T>>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageBuffer {
            width,
            height,
            rgb: data,
            alpha: vec![T::zero(); width * height],
            depth: None,
        }
    }

    pub fn from_rgb(width: usize, height: usize, rgb: Vec<T>) -> Self {
        assert_eq!(rgb.len(), width * height * 3);
        ImageBuffer {
            width,
            height,
            rgb,
            alpha: vec![T::one(); width * height],
            depth: None,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let o = (y * self.width + x) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn same_shape(&self, other: &ImageBuffer<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64())).collect::<Vec<U>>();
        ImageBuffer {
            width: self.width,
            height: self.height,
            rgb: c(&self.rgb),
            alpha: c(&self.alpha),
            depth: self.depth.as_ref().map(c),
        }
    }
}

/// Shared per-pixel evaluation so the forward, backward and reference passes
/// take bit-identical skip decisions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelHit<T> {
    pub alpha: T,
    pub gauss: T,
    pub clamped: bool,
    pub dx: T,
    pub dy: T,
}

#[inline(always)]
pub(crate) fn eval_pixel<T: Real>(
    p: &ProjectedSplat<T>,
    px: T,
    py: T,
    alpha_max: T,
    alpha_min: Option<T>,
) -> Option<PixelHit<T>> {
    let dx = px - p.mean[0];
    let dy = py - p.mean[1];
    if dx.abs() > p.radius || dy.abs() > p.radius {
        return None;
    }
    let half = T::lit(0.5);
    let power = -half * (p.conic[0] * dx * dx + p.conic[2] * dy * dy) - p.conic[1] * dx * dy;
    let gauss = power.exp();
    let raw = p.opacity * gauss;
    let (alpha, clamped) = if raw > alpha_max { (alpha_max, true) } else { (raw, false) };
    if let Some(min) = alpha_min {
        if alpha < min {
            return None;
        }
    }
    Some(PixelHit {
        alpha,
        gauss,
        clamped,
        dx,
        dy,
    })
}
