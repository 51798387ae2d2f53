use crate::geom::GaussianCloud;
use crate::raster::{SplatGrads, Splats};
use crate::real::{sigmoid, Real};

/// Lower bound on deformed linear scales.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Per-Gaussian deformation offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Offsets<T: Real> {
    pub xyz: Vec<[T; 3]>,
    pub rot: Vec<[T; 4]>,
    pub scale: Vec<[T; 3]>,
}

pub type OffsetGrads<T> = Offsets<T>;

/// Gradients w.r.t. the stored cloud parameters, laid out like the cloud.
pub type CloudGrads<T> = GaussianCloud<T>;

impl<T: Real> Offsets<T> {
    pub fn zeros(n: usize) -> Self {
        Offsets {
            xyz: vec![[T::zero(); 3]; n],
            rot: vec![[T::zero(); 4]; n],
            scale: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.xyz
            .iter()
            .flatten()
            .chain(self.rot.iter().flatten())
            .chain(self.scale.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.to_f64().abs()))
    }
}

/// Deformed, activated Gaussians: `x + δx`, `q + δr` (normalised by the
/// rasterizer), `max(exp(s) + δs, SCALE_FLOOR)` and `sigmoid(o)`. `None`
/// is the identity deformation.
pub fn apply_offsets<T: Real>(
    cloud: &GaussianCloud<T>,
    offsets: Option<&Offsets<T>>,
    active_degree: usize,
) -> Splats<T> {
    let n = cloud.len();
    if let Some(o) = offsets {
        assert_eq!(o.len(), n, "offset count must match the cloud");
    }
    let floor = T::lit(SCALE_FLOOR);
    let stride = cloud.sh_stride();
    let mut sh = vec![[T::zero(); 3]; n * stride];
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        cloud.sh_coeffs_into(i, &mut sh[i * stride..(i + 1) * stride]);
        let mut p = cloud.positions[i];
        let mut q = cloud.rotations[i];
        let mut s = cloud.scale(i);
        if let Some(o) = offsets {
            for k in 0..3 {
                p[k] += o.xyz[i][k];
                s[k] += o.scale[i][k];
            }
            for k in 0..4 {
                q[k] += o.rot[i][k];
            }
        }
        positions.push(p);
        rotations.push(q);
        scales.push(s.map(|v| if v > floor { v } else { floor }));
    }
    Splats {
        positions,
        rotations,
        scales,
        opacities: cloud.opacity_logits.iter().map(|&l| sigmoid(l)).collect(),
        sh,
        sh_stride: stride,
        sh_degree: active_degree.min(cloud.sh_degree),
    }
}

/// Pulls rasterizer gradients back onto the cloud parameters and the
/// offsets. Clamped scales pass no gradient.
pub fn apply_offsets_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    offsets: Option<&Offsets<T>>,
    grads: &SplatGrads<T>,
) -> (CloudGrads<T>, OffsetGrads<T>) {
    let n = cloud.len();
    let floor = T::lit(SCALE_FLOOR);
    let mut dc = cloud.zeros_like();
    let mut doff = Offsets::zeros(n);
    let stride = cloud.sh_stride();
    let rest = cloud.rest_stride();
    for i in 0..n {
        dc.positions[i] = grads.positions[i];
        doff.xyz[i] = grads.positions[i];
        doff.rot[i] = grads.rotations[i];
        dc.rotations[i] = grads.rotations[i];
        for k in 0..3 {
            let e = cloud.log_scales[i][k].exp();
            let s = e + offsets.map_or(T::zero(), |o| o.scale[i][k]);
            if s > floor {
                doff.scale[i][k] = grads.scales[i][k];
                dc.log_scales[i][k] = grads.scales[i][k] * e;
            }
        }
        let sig = sigmoid(cloud.opacity_logits[i]);
        dc.opacity_logits[i] = grads.opacities[i] * sig * (T::one() - sig);
        let row = &grads.sh[i * stride..(i + 1) * stride];
        dc.sh_dc[i] = row[0];
        for (k, c) in row[1..].iter().enumerate() {
            dc.sh_rest[i * rest + 3 * k..i * rest + 3 * k + 3].copy_from_slice(c);
        }
    }
    (dc, doff)
}
