use nalgebra::Vector3;

use super::sh::sh_coeff_count;
use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

/// Canonical-space Gaussian parameters in their stored (pre-activation) form.
///
/// Rotations are unnormalised `(w, x, y, z)` quaternions, scales are stored
/// as logarithms and opacities as logits. Colour is split into the DC
/// spherical-harmonics term and the higher-order rest, which train at
/// different learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T: Real = f32> {
    pub positions: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub sh_dc: Vec<[T; 3]>,
    /// `N × (B - 1) × 3`, `B = (sh_degree + 1)²`.
    pub sh_rest: Vec<T>,
    pub sh_degree: usize,
}

impl<T: Real> GaussianCloud<T> {
    pub fn empty(sh_degree: usize) -> Self {
        GaussianCloud {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_dc: Vec::new(),
            sh_rest: Vec::new(),
            sh_degree,
        }
    }

    /// Same shape, all zeros. Used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        let n = self.len();
        GaussianCloud {
            positions: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            sh_dc: vec![[T::zero(); 3]; n],
            sh_rest: vec![T::zero(); self.sh_rest.len()],
            sh_degree: self.sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// SH coefficients per channel, `(deg + 1)²`.
    pub fn sh_stride(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn rest_stride(&self) -> usize {
        (self.sh_stride() - 1) * 3
    }

    pub fn push(
        &mut self,
        position: [T; 3],
        rotation: [T; 4],
        log_scale: [T; 3],
        opacity_logit: T,
        sh_dc: [T; 3],
        sh_rest: &[T],
    ) {
        assert_eq!(sh_rest.len(), self.rest_stride());
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.sh_dc.push(sh_dc);
        self.sh_rest.extend_from_slice(sh_rest);
    }

    pub fn scale(&self, i: usize) -> [T; 3] {
        self.log_scales[i].map(|v| v.exp())
    }

    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    pub fn position_vec(&self, i: usize) -> Vector3<T> {
        Vector3::from(self.positions[i])
    }

    pub fn sh_rest_row(&self, i: usize) -> &[T] {
        let s = self.rest_stride();
        &self.sh_rest[i * s..(i + 1) * s]
    }

    /// Writes the full `[k][channel]` coefficient table of Gaussian `i`.
    pub fn sh_coeffs_into(&self, i: usize, out: &mut [[T; 3]]) {
        out[0] = self.sh_dc[i];
        let rest = self.sh_rest_row(i);
        for (k, chunk) in rest.chunks_exact(3).enumerate() {
            out[k + 1] = [chunk[0], chunk[1], chunk[2]];
        }
    }

    /// Keeps rows where `keep[i]` is true.
    pub fn retain_rows(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.rest_stride();
        let mut rest = Vec::with_capacity(self.sh_rest.len());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                rest.extend_from_slice(&self.sh_rest[i * stride..(i + 1) * stride]);
            }
        }
        self.sh_rest = rest;
        retain_by(&mut self.positions, keep);
        retain_by(&mut self.rotations, keep);
        retain_by(&mut self.log_scales, keep);
        retain_by(&mut self.opacity_logits, keep);
        retain_by(&mut self.sh_dc, keep);
    }

    /// Appends a copy of row `i` and returns the new row's index.
    pub fn duplicate_row(&mut self, i: usize) -> usize {
        let rest = self.sh_rest_row(i).to_vec();
        let (p, r, s, o, dc) = (
            self.positions[i],
            self.rotations[i],
            self.log_scales[i],
            self.opacity_logits[i],
            self.sh_dc[i],
        );
        self.push(p, r, s, o, dc, &rest);
        self.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidInput("Gaussian cloud is empty".into()));
        }
        if self.sh_degree > super::MAX_SH_DEGREE {
            return Err(Error::InvalidInput(format!(
                "SH degree {} exceeds {}",
                self.sh_degree,
                super::MAX_SH_DEGREE
            )));
        }
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_dc.len() != n
            || self.sh_rest.len() != n * self.rest_stride()
        {
            return Err(Error::InvalidInput("Gaussian cloud arrays have mismatched lengths".into()));
        }
        let finite = |v: &T| v.is_finite();
        let all_finite = self.positions.iter().flatten().all(finite)
            && self.rotations.iter().flatten().all(finite)
            && self.log_scales.iter().flatten().all(finite)
            && self.opacity_logits.iter().all(finite)
            && self.sh_dc.iter().flatten().all(finite)
            && self.sh_rest.iter().all(finite);
        if !all_finite {
            return Err(Error::InvalidInput("Gaussian cloud contains non-finite values".into()));
        }
        if self.rotations.iter().any(|q| q.iter().all(|v| *v == T::zero())) {
            return Err(Error::InvalidInput("Gaussian cloud contains a zero quaternion".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c3 = |v: &[T; 3]| v.map(|x| U::lit(x.to_f64()));
        GaussianCloud {
            positions: self.positions.iter().map(c3).collect(),
            rotations: self.rotations.iter().map(|q| q.map(|x| U::lit(x.to_f64()))).collect(),
            log_scales: self.log_scales.iter().map(c3).collect(),
            opacity_logits: self.opacity_logits.iter().map(|x| U::lit(x.to_f64())).collect(),
            sh_dc: self.sh_dc.iter().map(c3).collect(),
            sh_rest: self.sh_rest.iter().map(|x| U::lit(x.to_f64())).collect(),
            sh_degree: self.sh_degree,
        }
    }
}

pub(crate) fn retain_by<V>(v: &mut Vec<V>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().expect("mask length checked"));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(1);
        for i in 0..4 {
            let f = i as f64;
            c.push([f, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.0; 3], f - 2.0, [f; 3], &[f; 9]);
        }
        c
    }

    #[test]
    fn activations_are_in_range() {
        let mut c = cloud();
        c.opacity_logits[0] = -80.0;
        c.opacity_logits[1] = 30.0;
        c.log_scales[2] = [-50.0; 3];
        for i in 0..c.len() {
            let o = c.opacity(i);
            assert!(o > 0.0 && o <= 1.0);
            assert!(c.scale(i).iter().all(|s| *s > 0.0));
        }
    }

    #[test]
    fn retain_and_duplicate_keep_rows_aligned() {
        let mut c = cloud();
        let j = c.duplicate_row(1);
        assert_eq!(j, 4);
        assert_eq!(c.sh_rest_row(4), c.sh_rest_row(1));
        c.retain_rows(&[true, false, true, false, true]);
        assert_eq!(c.len(), 3);
        assert_eq!(c.positions[2], [1.0, 0.0, 1.0]);
        assert_eq!(c.sh_rest_row(2), &[1.0; 9]);
        c.validate().unwrap();
    }

    #[test]
    fn validate_catches_mismatch() {
        let mut c = cloud();
        c.opacity_logits.pop();
        assert!(c.validate().is_err());
        assert!(GaussianCloud::<f32>::empty(0).validate().is_err());
    }
}
