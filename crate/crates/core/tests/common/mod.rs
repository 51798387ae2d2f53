#![allow(dead_code)]

use deformgs::geom::{Camera, GaussianCloud};
use deformgs::raster::Splats;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera on a sphere of radius `dist` looking at the origin.
pub fn orbit_camera<R: Rng>(rng: &mut R, size: u32, dist: f64) -> Camera {
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.random_range(-0.6..0.6);
    let eye = Vector3::new(dist * el.cos() * az.cos(), dist * el.cos() * az.sin(), dist * el.sin());
    Camera::look_at(size, size, size as f64, eye, Vector3::zeros(), Vector3::z(), 0.5).unwrap()
}

/// Random canonical cloud inside a cube of half-size `extent`.
pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, sh_degree: usize, extent: f64) -> GaussianCloud<f64> {
    let mut c = GaussianCloud::empty(sh_degree);
    let rest = c.rest_stride();
    for _ in 0..n {
        let p = [0; 3].map(|_| rng.random_range(-extent..extent));
        let q = [0; 4].map(|_| StandardNormal.sample(rng));
        let s = [0; 3].map(|_| rng.random_range(0.02f64..0.25).ln());
        let o = rng.random_range(-3.0..4.0);
        let dc = [0; 3].map(|_| rng.random_range(-1.0..2.0));
        let r: Vec<f64> = (0..rest).map(|_| rng.random_range(-0.3..0.3)).collect();
        c.push(p, q, s, o, dc, &r);
    }
    c
}

pub fn random_splats<R: Rng>(rng: &mut R, n: usize, sh_degree: usize) -> Splats<f64> {
    Splats::from_cloud(&random_cloud(rng, n, sh_degree, 1.0), sh_degree)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
