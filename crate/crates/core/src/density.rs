//! Adaptive density control: gradient statistics, clone, split, prune and
//! opacity reset on the canonical cloud and its optimizer state.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::deform::CloudGrads;
use crate::geom::{quat_to_rotation, normalize_quat, GaussianCloud};
use crate::optim::CloudOptimizer;
use crate::raster::{RasterWorkspace, SplatGrads};
use crate::real::{logit, sigmoid, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyConfig {
    /// Mean screen-space gradient norm (NDC units) that triggers densification.
    pub grad_threshold: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Screen radius in pixels above which Gaussians are pruned.
    pub max_screen_radius: Option<f64>,
    pub split_factor: f64,
    pub split_count: usize,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_screen_radius: None,
            split_factor: 1.6,
            split_count: 2,
            max_gaussians: 200_000,
        }
    }
}

/// Per-Gaussian statistics accumulated between densification events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub counts: Vec<u32>,
    pub max_radii: Vec<f64>,
    /// Summed canonical positional gradient, for clone displacement.
    pub position_grad_sum: Vec<[f64; 3]>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_sum: vec![0.0; n],
            counts: vec![0; n],
            max_radii: vec![0.0; n],
            position_grad_sum: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Adds one rendered view. The screen gradient is measured in NDC
    /// units, `‖(∂L/∂u · W/2, ∂L/∂v · H/2)‖`.
    pub fn accumulate<T: Real>(&mut self, ws: &RasterWorkspace<T>, splat_grads: &SplatGrads<T>, cloud_grads: &CloudGrads<T>) {
        assert_eq!(self.len(), splat_grads.visible.len(), "stats out of sync with the cloud");
        let (hw, hh) = (ws.width as f64 * 0.5, ws.height as f64 * 0.5);
        for i in 0..self.len() {
            let Some(p) = ws.projected[i].as_ref() else { continue };
            let [gx, gy] = splat_grads.mean2d[i];
            let (gx, gy) = (gx.to_f64() * hw, gy.to_f64() * hh);
            self.grad_sum[i] += (gx * gx + gy * gy).sqrt();
            self.counts[i] += 1;
            self.max_radii[i] = self.max_radii[i].max(p.radius.to_f64());
            for k in 0..3 {
                self.position_grad_sum[i][k] += cloud_grads.positions[i][k].to_f64();
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.counts[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
    /// Densification was skipped because of the size cap.
    pub capped: bool,
    pub count: usize,
}

/// One densify-and-prune event. `position_lr` sets the clone displacement;
/// `rng` drives split sampling. Statistics are reset afterwards.
#[allow(clippy::too_many_arguments)]
pub fn densify_and_prune<T: Real, R: Rng + ?Sized>(
    cloud: &mut GaussianCloud<T>,
    stats: &mut DensifyStats,
    opt: &mut CloudOptimizer<T>,
    cfg: &DensifyConfig,
    scene_extent: f64,
    position_lr: f64,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    assert_eq!(stats.len(), n);
    assert_eq!(opt.rows(), n);
    let dense_limit = cfg.percent_dense * scene_extent;
    let mut clone = Vec::new();
    let mut split = Vec::new();
    for i in 0..n {
        if stats.counts[i] == 0 || stats.mean_grad(i) < cfg.grad_threshold {
            continue;
        }
        let max_scale = cloud.scale(i).iter().fold(f64::MIN, |m, s| m.max(s.to_f64()));
        if max_scale <= dense_limit {
            clone.push(i);
        } else {
            split.push(i);
        }
    }

    let mut report = DensifyReport::default();
    let grown = n + clone.len() + split.len() * (cfg.split_count.saturating_sub(1));
    let mut radii = stats.max_radii.clone();
    let mut removed_parent = vec![false; n];
    if grown > cfg.max_gaussians && !(clone.is_empty() && split.is_empty()) {
        log::warn!(
            "densification skipped: {grown} Gaussians would exceed the cap of {}",
            cfg.max_gaussians
        );
        report.capped = true;
    } else {
        let rest = cloud.rest_stride();
        for &i in &clone {
            let j = cloud.duplicate_row(i);
            let c = stats.counts[i] as f64;
            for k in 0..3 {
                let step = position_lr * stats.position_grad_sum[i][k] / c;
                cloud.positions[j][k] -= T::lit(step);
            }
            opt.append_rows(1, rest);
            radii.push(0.0);
        }
        let shrink = T::lit(cfg.split_factor.ln());
        for &i in &split {
            let q = normalize_quat(&cloud.rotations[i]).unwrap_or([T::one(), T::zero(), T::zero(), T::zero()]);
            let rot = quat_to_rotation(&q).map(|v| v.to_f64());
            let scale = Vector3::from(cloud.scale(i).map(|v| v.to_f64()));
            let center = Vector3::from(cloud.positions[i].map(|v| v.to_f64()));
            for _ in 0..cfg.split_count {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let p = center + rot * scale.component_mul(&z);
                let j = cloud.duplicate_row(i);
                cloud.positions[j] = [T::lit(p.x), T::lit(p.y), T::lit(p.z)];
                for k in 0..3 {
                    cloud.log_scales[j][k] -= shrink;
                }
                opt.append_rows(1, rest);
                radii.push(0.0);
            }
            removed_parent[i] = true;
        }
        report.clones = clone.len();
        report.splits = split.len();
    }

    let keep: Vec<bool> = (0..cloud.len())
        .map(|i| {
            if i < n && removed_parent[i] {
                return false;
            }
            let transparent = cloud.opacity(i).to_f64() < cfg.prune_opacity;
            let too_big = cfg.max_screen_radius.is_some_and(|r| radii[i] > r);
            !(transparent || too_big)
        })
        .collect();
    report.pruned = keep.iter().filter(|k| !**k).count() - report.splits;
    cloud.retain_rows(&keep);
    opt.retain_rows(&keep);
    *stats = DensifyStats::new(cloud.len());
    report.count = cloud.len();
    report
}

/// Caps every opacity at `ceiling` and clears the opacity moments.
pub fn reset_opacity<T: Real>(cloud: &mut GaussianCloud<T>, opt: &mut CloudOptimizer<T>, ceiling: f64) {
    let cap = T::lit(ceiling);
    for l in cloud.opacity_logits.iter_mut() {
        if sigmoid(*l) > cap {
            *l = logit(cap);
        }
    }
    opt.opacity_logits.reset_moments();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(opacities: &[f64], log_scale: f64) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(0);
        for (i, &o) in opacities.iter().enumerate() {
            c.push([i as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [log_scale; 3], logit(o), [0.1; 3], &[]);
        }
        c
    }

    fn stats_with(grads: &[f64]) -> DensifyStats {
        let mut s = DensifyStats::new(grads.len());
        for (i, g) in grads.iter().enumerate() {
            s.grad_sum[i] = 2.0 * g;
            s.counts[i] = 2;
            s.position_grad_sum[i] = [2.0, 0.0, 0.0];
        }
        s
    }

    #[test]
    fn below_threshold_does_nothing() {
        let mut c = cloud(&[0.5; 4], -5.0);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        let mut s = stats_with(&[1e-4, 1.9e-4, 0.0, 1.99e-4]);
        let r = densify_and_prune(&mut c, &mut s, &mut opt, &DensifyConfig::default(), 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((r.clones, r.splits, r.pruned, r.count), (0, 0, 0, 4));
    }

    #[test]
    fn clone_copies_and_displaces() {
        let mut c = cloud(&[0.5; 2], -5.0);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        opt.positions.m.iter_mut().for_each(|m| *m = 1.0);
        let mut s = stats_with(&[3e-4, 0.0]);
        let r = densify_and_prune(&mut c, &mut s, &mut opt, &DensifyConfig::default(), 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((r.clones, r.splits, r.count), (1, 0, 3));
        assert_eq!(c.positions[2], [-0.1, 0.0, 0.0]);
        assert_eq!(c.log_scales[2], c.log_scales[0]);
        assert_eq!(c.opacity_logits[2], c.opacity_logits[0]);
        assert_eq!(&opt.positions.m[6..], &[0.0; 3]);
        assert_eq!(opt.rows(), 3);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn split_divides_scale() {
        let mut c = GaussianCloud::<f64>::empty(0);
        c.push([0.0; 3], [1.0, 0.0, 0.0, 0.0], [1.6f64.ln(), 3.2f64.ln(), 1.6f64.ln()], 0.0, [0.1; 3], &[]);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        let mut s = stats_with(&[1.0]);
        let r = densify_and_prune(&mut c, &mut s, &mut opt, &DensifyConfig::default(), 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((r.clones, r.splits, r.pruned, r.count), (0, 1, 0, 2));
        for i in 0..2 {
            let s = c.scale(i);
            assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12 && (s[2] - 1.0).abs() < 1e-12);
        }
        assert_ne!(c.positions[0], c.positions[1]);
    }

    #[test]
    fn prunes_transparent_and_large() {
        let mut c = cloud(&[0.001, 0.5, 0.0049, 0.0051, 0.9], -5.0);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        let mut s = stats_with(&[0.0; 5]);
        s.max_radii = vec![1.0, 1.0, 1.0, 1.0, 25.0];
        let cfg = DensifyConfig {
            max_screen_radius: Some(20.0),
            ..Default::default()
        };
        let r = densify_and_prune(&mut c, &mut s, &mut opt, &cfg, 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((r.pruned, r.count), (3, 2));
        assert_eq!(c.positions, vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
    }

    #[test]
    fn cap_skips_densification_but_prunes() {
        let mut c = cloud(&[0.5, 0.001, 0.5], -5.0);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        let mut s = stats_with(&[1.0, 0.0, 1.0]);
        let cfg = DensifyConfig {
            max_gaussians: 4,
            ..Default::default()
        };
        let r = densify_and_prune(&mut c, &mut s, &mut opt, &cfg, 1.0, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(r.capped);
        assert_eq!((r.clones, r.pruned, r.count), (0, 1, 2));
    }

    #[test]
    fn opacity_reset() {
        let mut c = cloud(&[0.9, 0.005], -5.0);
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        opt.opacity_logits.v = vec![1.0, 1.0];
        reset_opacity(&mut c, &mut opt, 0.01);
        assert!((c.opacity(0) - 0.01).abs() < 1e-12);
        assert!((c.opacity(1) - 0.005).abs() < 1e-12);
        assert_eq!(opt.opacity_logits.v, vec![0.0, 0.0]);
    }
}
