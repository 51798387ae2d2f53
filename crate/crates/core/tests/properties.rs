mod common;

use deformgs::deform::{apply_offsets, ast_sample, positional_encoding, AstSchedule, DeformNet, DeformNetConfig, Offsets};
use deformgs::geom::{build_covariance, Camera};
use deformgs::optim::{psnr, ssim, AdamConfig, ParamGroup};
use deformgs::raster::{prepare, rasterize_forward, RasterConfig, Splats};
use deformgs::scene::{Checkpoint, RngState};
use deformgs::density::{densify_and_prune, DensifyConfig, DensifyStats};
use deformgs::optim::{CloudOptimizer, NetOptimizer};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn camera() -> Camera {
    Camera::look_at(32, 32, 36.0, Vector3::new(0.4, -3.0, 1.0), Vector3::zeros(), Vector3::z(), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_is_symmetric_psd(q in prop::array::uniform4(-1.0f64..1.0), s in prop::array::uniform3(1e-3f64..2.0)) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let c = build_covariance(&q, &Vector3::from(s)).unwrap();
        prop_assert!((c - c.transpose()).abs().max() < 1e-12);
        let eig = c.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|e| *e > -1e-12));
        let mut sorted = s.map(|v| v * v);
        sorted.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = eig.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(sorted) {
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn render_is_invariant_to_quaternion_scale(seed in any::<u64>(), k in 0.1f64..10.0) {
        let mut r = common::rng(seed);
        let s = common::random_splats(&mut r, 20, 1);
        let mut scaled = s.clone();
        for q in scaled.rotations.iter_mut() {
            *q = q.map(|v| v * k);
        }
        let cam = camera();
        let cfg = RasterConfig::exact();
        let a = rasterize_forward(&mut prepare(&s, &cam, &cfg), [0.0; 3]);
        let b = rasterize_forward(&mut prepare(&scaled, &cam, &cfg), [0.0; 3]);
        prop_assert!(common::max_abs_diff(&a.rgb, &b.rgb) < 1e-9);
    }

    #[test]
    fn alpha_and_transmittance_stay_in_range(seed in any::<u64>(), thresholds in any::<bool>()) {
        let mut r = common::rng(seed);
        let s = common::random_splats(&mut r, 60, 0);
        let cfg = RasterConfig { thresholds, ..Default::default() };
        let mut ws = prepare(&s, &camera(), &cfg);
        let img = rasterize_forward(&mut ws, [1.0, 0.5, 0.0]);
        for (a, t) in img.alpha.iter().zip(&ws.final_transmittance) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((0.0..=1.0).contains(t));
            prop_assert!((a + t - 1.0).abs() < 1e-9);
        }
        prop_assert!(img.rgb.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn background_shows_through_empty_pixels(bg in prop::array::uniform3(0.0f64..1.0)) {
        let s = Splats::<f64> {
            positions: vec![], rotations: vec![], scales: vec![], opacities: vec![], sh: vec![], sh_stride: 1, sh_degree: 0,
        };
        let img = rasterize_forward(&mut prepare(&s, &camera(), &RasterConfig::default()), bg);
        for px in img.rgb.chunks_exact(3) {
            prop_assert_eq!(px, &bg[..]);
        }
    }

    #[test]
    fn encoding_is_bounded_and_paired(p in prop::collection::vec(-3.0f64..3.0, 1..4), levels in 1usize..=10) {
        let mut out = vec![0.0; 2 * p.len() * levels];
        positional_encoding(&p, levels, &mut out);
        let d = p.len();
        for k in 0..levels {
            for j in 0..d {
                let (s, c) = (out[2 * d * k + j], out[2 * d * k + d + j]);
                prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ast_noise_vanishes_after_tau(tau in 1usize..50_000, extra in 0usize..1000, seed in any::<u64>()) {
        let sched = AstSchedule { beta: 0.1, tau, delta_t: 1.0 / 60.0, enabled: true };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(ast_sample(tau + extra, &sched, &mut r), 0.0);
        prop_assert_eq!(sched.std(0), 0.1 / 60.0);
        let disabled = AstSchedule { enabled: false, ..sched };
        prop_assert_eq!(ast_sample(0, &disabled, &mut r), 0.0);
    }

    #[test]
    fn zero_offsets_are_the_identity(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let c = common::random_cloud(&mut r, 15, 2, 1.0);
        let a = apply_offsets(&c, Some(&Offsets::zeros(c.len())), 2);
        prop_assert_eq!(&a, &Splats::from_cloud(&c, 2));
        prop_assert_eq!(&a, &apply_offsets(&c, None, 2));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_weight_gradient(seed in any::<u64>()) {
        let cfg = DeformNetConfig { depth: 3, width: 8, skip_layer: Some(1), pos_levels: 3, time_levels: 2 };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let net: DeformNet<f64> = DeformNet::new(cfg, &mut r).unwrap();
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.1, 0.2, -0.3]).collect();
        let (o, cache) = net.forward(&pts, 0.4, 0.0);
        let (g, _) = net.backward(&cache, &Offsets::zeros(o.len()), false);
        prop_assert_eq!(g, net.zeros_like());
    }

    #[test]
    fn adam_ignores_zero_gradients_from_rest(vals in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let mut p = vals.clone();
        let mut g = ParamGroup::<f64>::new("x", p.len());
        g.step(&mut p, &vec![0.0; vals.len()], 0.1, &AdamConfig::default()).unwrap();
        prop_assert_eq!(p, vals);
    }

    #[test]
    fn adam_first_step_moves_by_lr(vals in prop::collection::vec(-5.0f64..5.0, 1..20), lr in 1e-4f64..1e-1) {
        let mut p = vals.clone();
        let grads: Vec<f64> = vals.iter().map(|v| if *v >= 0.0 { 1.0 + v } else { -1.0 + v }).collect();
        let mut g = ParamGroup::<f64>::new("x", p.len());
        g.step(&mut p, &grads, lr, &AdamConfig::default()).unwrap();
        for ((new, old), gr) in p.iter().zip(&vals).zip(&grads) {
            prop_assert!((old - new - lr * gr.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_and_psnr_are_symmetric(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let a: Vec<f64> = (0..16 * 12 * 3).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| (v + r.random_range(-0.1..0.1)).clamp(0.0, 1.0)).collect();
        let (s1, s2) = (ssim(&a, &b, 16, 12, 3), ssim(&b, &a, 16, 12, 3));
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!(s1 <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a, 16, 12, 3) - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &b), psnr(&b, &a));
    }

    #[test]
    fn checkpoint_bytes_roundtrip(seed in any::<u64>(), n in 1usize..40, degree in 0usize..=3) {
        let mut r = common::rng(seed);
        let cloud = common::random_cloud(&mut r, n, degree, 1.0).cast::<f32>();
        let cfg = DeformNetConfig { depth: 2, width: 4, skip_layer: None, pos_levels: 2, time_levels: 1 };
        let net: DeformNet<f32> = DeformNet::new(cfg, &mut r).unwrap();
        let ck = Checkpoint {
            iteration: seed % 1000,
            config: format!("seed = {seed}"),
            scene_extent: 1.5,
            cloud_opt: CloudOptimizer::new(&cloud, AdamConfig::default()),
            net_opt: NetOptimizer::new(&net, AdamConfig::default()),
            cloud,
            net,
            rng: RngState::capture(&r),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back.cloud, &ck.cloud);
        prop_assert_eq!(back.cloud.len(), n);
    }

    #[test]
    fn densify_respects_cap_alignment_and_survivors(seed in any::<u64>(), n in 1usize..60, cap in 1usize..120) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let mut c = common::random_cloud(&mut r, n, 1, 1.0);
        for l in c.opacity_logits.iter_mut() {
            *l = r.random_range(-7.0..3.0);
        }
        let mut opt = CloudOptimizer::new(&c, AdamConfig::default());
        let mut stats = DensifyStats::new(n);
        for i in 0..n {
            stats.counts[i] = r.random_range(0..4);
            stats.grad_sum[i] = r.random_range(0.0..1e-3);
            stats.max_radii[i] = r.random_range(0.0..30.0);
        }
        let cfg = DensifyConfig { max_gaussians: cap.max(n), max_screen_radius: Some(20.0), ..Default::default() };
        let before = c.clone();
        let radii = stats.max_radii.clone();
        let hot: Vec<bool> = (0..n).map(|i| stats.counts[i] > 0 && stats.mean_grad(i) >= cfg.grad_threshold).collect();
        let rep = densify_and_prune(&mut c, &mut stats, &mut opt, &cfg, 2.0, 1e-3, &mut r);
        prop_assert!(c.len() <= cfg.max_gaussians);
        prop_assert_eq!(opt.rows(), c.len());
        prop_assert_eq!(stats.len(), c.len());
        prop_assert_eq!(rep.count, c.len());
        // Every well-behaved, unsplit Gaussian survives unchanged.
        for i in 0..n {
            let split = !rep.capped && hot[i] && before.scale(i).iter().cloned().fold(0.0, f64::max) > 0.01 * 2.0;
            if before.opacity(i) >= 0.005 && radii[i] <= 20.0 && !split {
                prop_assert!(c.positions.contains(&before.positions[i]));
            }
        }
    }
}

