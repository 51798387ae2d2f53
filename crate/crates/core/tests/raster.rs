mod common;

use common::{max_abs_diff, orbit_camera, random_splats, rng};
use deformgs::geom::Camera;
use deformgs::raster::{prepare, rasterize_backward, rasterize_forward, reference_render, RasterConfig, Splats};
use nalgebra::{Matrix4, Vector3};

fn render(s: &Splats<f64>, cam: &Camera, cfg: &RasterConfig, bg: [f64; 3]) -> deformgs::raster::ImageBuffer<f64> {
    let mut ws = prepare(s, cam, cfg);
    rasterize_forward(&mut ws, bg)
}

#[test]
fn tiled_matches_reference_without_thresholds() {
    let mut r = rng(11);
    for case in 0..12 {
        let s = random_splats(&mut r, 40 + case * 10, case % 4);
        let cam = orbit_camera(&mut r, 48, 3.5);
        let cfg = RasterConfig::exact();
        let bg = [0.2, 0.0, 0.7];
        let tiled = render(&s, &cam, &cfg, bg);
        let oracle = reference_render(&s, &cam, bg, &cfg);
        assert!(max_abs_diff(&tiled.rgb, &oracle.rgb) <= 1e-5, "case {case}");
        assert!(max_abs_diff(&tiled.alpha, &oracle.alpha) <= 1e-5, "case {case}");
    }
}

#[test]
fn tiled_matches_reference_with_thresholds() {
    let mut r = rng(12);
    for case in 0..12 {
        let s = random_splats(&mut r, 150, 1);
        let cam = orbit_camera(&mut r, 64, 3.0);
        let cfg = RasterConfig::default();
        let tiled = render(&s, &cam, &cfg, [0.0; 3]);
        let oracle = reference_render(&s, &cam, [0.0; 3], &cfg);
        assert!(max_abs_diff(&tiled.rgb, &oracle.rgb) <= 5e-4, "case {case}");
    }
}

#[test]
fn single_gaussian_depth_is_its_camera_depth() {
    let cam = Camera::new(32, 32, 40.0, 40.0, 16.0, 16.0, Matrix4::identity(), 0.0).unwrap();
    let s = Splats {
        positions: vec![[0.1, -0.05, 2.5]],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]],
        scales: vec![[0.2; 3]],
        opacities: vec![0.8],
        sh: vec![[1.0; 3]],
        sh_stride: 1,
        sh_degree: 0,
    };
    let img = render(&s, &cam, &RasterConfig::default(), [0.0; 3]);
    let depth = img.depth.unwrap();
    let centre = 16 * 32 + 18;
    assert!((depth[centre] - 2.5).abs() < 1e-9);
    assert!(img.alpha[centre] > 0.5);
}

#[test]
fn forward_and_backward_independent_of_worker_count() {
    let mut r = rng(13);
    let s = random_splats(&mut r, 300, 2);
    let cam = orbit_camera(&mut r, 80, 3.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut ws = prepare(&s, &cam, &RasterConfig::default());
            let img = rasterize_forward(&mut ws, [0.1; 3]);
            let grad: Vec<f64> = (0..img.rgb.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            (img, rasterize_backward(&ws, &s, &cam, &grad))
        })
    };
    let (a, ga) = run(1);
    let (b, gb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn single_and_double_precision_agree() {
    let mut r = rng(14);
    let s = random_splats(&mut r, 100, 3);
    let cam = orbit_camera(&mut r, 64, 3.0);
    let cfg = RasterConfig::default();
    let hi = render(&s, &cam, &cfg, [0.0; 3]);
    let s32 = Splats::<f32> {
        positions: s.positions.iter().map(|p| p.map(|v| v as f32)).collect(),
        rotations: s.rotations.iter().map(|p| p.map(|v| v as f32)).collect(),
        scales: s.scales.iter().map(|p| p.map(|v| v as f32)).collect(),
        opacities: s.opacities.iter().map(|v| *v as f32).collect(),
        sh: s.sh.iter().map(|p| p.map(|v| v as f32)).collect(),
        sh_stride: s.sh_stride,
        sh_degree: s.sh_degree,
    };
    let mut ws = prepare(&s32, &cam, &cfg);
    let lo = rasterize_forward(&mut ws, [0.0f32; 3]).cast::<f64>();
    assert!(max_abs_diff(&hi.rgb, &lo.rgb) < 2e-3);
}

/// Central differences of `Σ w·C` w.r.t. every splat input at SH degree 3.
#[test]
fn backward_matches_finite_differences_at_full_sh_degree() {
    let mut r = rng(15);
    let s = random_splats(&mut r, 8, 3);
    let cam = Camera::look_at(24, 24, 30.0, Vector3::new(0.3, -3.0, 0.4), Vector3::zeros(), Vector3::z(), 0.0).unwrap();
    let cfg = RasterConfig::exact();
    let bg = [0.3, 0.1, 0.2];
    let weights: Vec<f64> = (0..24 * 24 * 3).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect();
    let eval = |s: &Splats<f64>| {
        let mut ws = prepare(s, &cam, &cfg);
        let img = rasterize_forward(&mut ws, bg);
        let l: f64 = img.rgb.iter().zip(&weights).map(|(c, w)| c * w).sum();
        (l, ws.fingerprint())
    };
    let mut ws = prepare(&s, &cam, &cfg);
    rasterize_forward(&mut ws, bg);
    let base_fp = ws.fingerprint();
    let g = rasterize_backward(&ws, &s, &cam, &weights);

    let h = 1e-5;
    let mut checked = 0;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut Splats<f64>, f64)| {
        let mut p = s.clone();
        perturb(&mut p, h);
        let (lp, fp) = eval(&p);
        let mut m = s.clone();
        perturb(&mut m, -h);
        let (lm, fm) = eval(&m);
        if fp != base_fp || fm != base_fp {
            return;
        }
        let n = (lp - lm) / (2.0 * h);
        let rel = (analytic - n).abs() / analytic.abs().max(n.abs()).max(1e-7);
        assert!(rel < 1e-4, "analytic {analytic} numeric {n}");
        checked += 1;
    };
    for i in 0..s.len() {
        for k in 0..3 {
            check(g.positions[i][k], &|s, d| s.positions[i][k] += d);
            check(g.scales[i][k], &|s, d| s.scales[i][k] += d);
        }
        for k in 0..4 {
            check(g.rotations[i][k], &|s, d| s.rotations[i][k] += d);
        }
        check(g.opacities[i], &|s, d| s.opacities[i] += d);
        for c in 0..16 {
            for ch in 0..3 {
                check(g.sh[i * 16 + c][ch], &|s, d| s.sh[i * 16 + c][ch] += d);
            }
        }
    }
    assert!(checked > 400, "only {checked} samples were smooth");
}
