use crate::deform::{CloudGrads, DeformGrads, DeformNet};
use crate::error::{Error, Result};
use crate::geom::GaussianCloud;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Adam moments for one flat parameter tensor. Rows can be dropped or
/// appended (with zero moments) as the cloud changes size; the step count
/// is shared by the whole group.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T: Real> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> ParamGroup<T> {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        ParamGroup {
            name: name.into(),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients abort before
    /// any state is touched.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64, cfg: &AdamConfig) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "group `{}` is misaligned", self.name);
        assert_eq!(grads.len(), params.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                group: self.name.clone(),
            });
        }
        self.step += 1;
        let k = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(k);
        let bc2 = 1.0 - cfg.beta2.powi(k);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2_sqrt = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(cfg.eps);
        let one = T::one();
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() * inv_bc2_sqrt + eps);
        }
        Ok(())
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        let width = if keep.is_empty() { 0 } else { self.m.len() / keep.len() };
        assert_eq!(width * keep.len(), self.m.len());
        let filter = |buf: &Vec<T>| -> Vec<T> {
            buf.chunks_exact(width.max(1))
                .zip(keep)
                .filter(|(_, k)| **k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        };
        if width > 0 {
            self.m = filter(&self.m);
            self.v = filter(&self.v);
        }
    }

    pub fn append_zeros(&mut self, len: usize) {
        self.m.resize(self.m.len() + len, T::zero());
        self.v.resize(self.v.len() + len, T::zero());
    }

    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
    }
}

/// Learning rates for the canonical cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudLr {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

/// Adam state for every field of a [`GaussianCloud`], kept row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudOptimizer<T: Real> {
    pub config: AdamConfig,
    pub positions: ParamGroup<T>,
    pub rotations: ParamGroup<T>,
    pub log_scales: ParamGroup<T>,
    pub opacity_logits: ParamGroup<T>,
    pub sh_dc: ParamGroup<T>,
    pub sh_rest: ParamGroup<T>,
}

impl<T: Real> CloudOptimizer<T> {
    pub fn new(cloud: &GaussianCloud<T>, config: AdamConfig) -> Self {
        let n = cloud.len();
        CloudOptimizer {
            config,
            positions: ParamGroup::new("positions", 3 * n),
            rotations: ParamGroup::new("rotations", 4 * n),
            log_scales: ParamGroup::new("scales", 3 * n),
            opacity_logits: ParamGroup::new("opacities", n),
            sh_dc: ParamGroup::new("sh_dc", 3 * n),
            sh_rest: ParamGroup::new("sh_rest", cloud.sh_rest.len()),
        }
    }

    pub fn groups(&self) -> [&ParamGroup<T>; 6] {
        [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.opacity_logits,
            &self.sh_dc,
            &self.sh_rest,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup<T>; 6] {
        [
            &mut self.positions,
            &mut self.rotations,
            &mut self.log_scales,
            &mut self.opacity_logits,
            &mut self.sh_dc,
            &mut self.sh_rest,
        ]
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud<T>, g: &CloudGrads<T>, lr: &CloudLr) -> Result<()> {
        let cfg = self.config;
        self.positions
            .step(cloud.positions.as_flattened_mut(), g.positions.as_flattened(), lr.position, &cfg)?;
        self.rotations
            .step(cloud.rotations.as_flattened_mut(), g.rotations.as_flattened(), lr.rotation, &cfg)?;
        self.log_scales
            .step(cloud.log_scales.as_flattened_mut(), g.log_scales.as_flattened(), lr.scale, &cfg)?;
        self.opacity_logits
            .step(&mut cloud.opacity_logits, &g.opacity_logits, lr.opacity, &cfg)?;
        self.sh_dc
            .step(cloud.sh_dc.as_flattened_mut(), g.sh_dc.as_flattened(), lr.sh_dc, &cfg)?;
        self.sh_rest.step(&mut cloud.sh_rest, &g.sh_rest, lr.sh_rest, &cfg)?;
        Ok(())
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        for g in self.groups_mut() {
            g.retain_rows(keep);
        }
    }

    /// Appends zero moments for `rows` new Gaussians.
    pub fn append_rows(&mut self, rows: usize, rest_stride: usize) {
        self.positions.append_zeros(3 * rows);
        self.rotations.append_zeros(4 * rows);
        self.log_scales.append_zeros(3 * rows);
        self.opacity_logits.append_zeros(rows);
        self.sh_dc.append_zeros(3 * rows);
        self.sh_rest.append_zeros(rest_stride * rows);
    }

    pub fn rows(&self) -> usize {
        self.opacity_logits.m.len()
    }
}

/// Adam state for a deformation network: one group per weight and bias
/// tensor, in [`DeformNet::layers`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetOptimizer<T: Real> {
    pub config: AdamConfig,
    pub groups: Vec<ParamGroup<T>>,
}

impl<T: Real> NetOptimizer<T> {
    pub fn new(net: &DeformNet<T>, config: AdamConfig) -> Self {
        let mut groups = Vec::new();
        for (name, l) in net.layers() {
            groups.push(ParamGroup::new(format!("{name}.weight"), l.weight.len()));
            groups.push(ParamGroup::new(format!("{name}.bias"), l.bias.len()));
        }
        NetOptimizer { config, groups }
    }

    pub fn step(&mut self, net: &mut DeformNet<T>, g: &DeformGrads<T>, lr: f64) -> Result<()> {
        let cfg = self.config;
        let grads = g.layers();
        for (k, layer) in net.layers_mut().into_iter().enumerate() {
            let gl = grads[k].1;
            self.groups[2 * k].step(&mut layer.weight, &gl.weight, lr, &cfg)?;
            self.groups[2 * k + 1].step(&mut layer.bias, &gl.bias, lr, &cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut g = ParamGroup::<f64>::new("p", 3);
        let mut p = vec![1.0, -2.0, 3.0];
        g.step(&mut p, &[0.0; 3], 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut g = ParamGroup::<f64>::new("p", 2);
        let mut p = vec![0.0, 5.0];
        g.step(&mut p, &[1.0, -3.0], 1e-2, &AdamConfig::default()).unwrap();
        assert!((p[0] + 1e-2).abs() < 1e-12);
        assert!((p[1] - 5.01).abs() < 1e-12);
    }

    #[test]
    fn matches_textbook_adam_over_several_steps() {
        let cfg = AdamConfig {
            eps: 1e-8,
            ..Default::default()
        };
        let mut g = ParamGroup::<f64>::new("p", 1);
        let mut p = vec![0.3];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        for k in 1..=5 {
            let grad = (k as f64).sin();
            g.step(&mut p, &[grad], 0.05, &cfg).unwrap();
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut g = ParamGroup::<f32>::new("opacities", 2);
        let mut p = vec![0.0; 2];
        let err = g.step(&mut p, &[1.0, f32::NAN], 0.1, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("opacities"));
        assert_eq!(g.step, 0);
        assert_eq!(p, vec![0.0; 2]);
    }

    #[test]
    fn rows_stay_aligned() {
        let mut g = ParamGroup::<f64>::new("p", 6);
        g.m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        g.v = g.m.clone();
        g.retain_rows(&[true, false, true]);
        assert_eq!(g.m, vec![1.0, 2.0, 5.0, 6.0]);
        g.append_zeros(2);
        assert_eq!(g.v, vec![1.0, 2.0, 5.0, 6.0, 0.0, 0.0]);
    }
}
