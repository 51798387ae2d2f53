//! 64-bit central-difference check of every analytic backward pass.
//!
//! Each scene is a handful of random Gaussians, a miniature deformation
//! network and a random target image. The loss is the training loss, so a
//! single check covers the rasterizer, the offset mapping, the network and
//! the photometric loss. Samples whose perturbation crosses a discontinuity
//! (support box edge, clamp, sort order, ReLU boundary, L1 kink) are skipped
//! and counted.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::deform::{apply_offsets, DeformNet, DeformNetConfig, Linear, Offsets, SCALE_FLOOR};
use crate::geom::{Camera, GaussianCloud};
use crate::optim::{photometric_loss, SSIM_WEIGHT};
use crate::pipeline::{backward_frame, forward_frame, FrameSetup};
use crate::raster::{prepare, rasterize_forward, ImageBuffer, RasterConfig};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub scenes: usize,
    pub gaussians: usize,
    /// Square image side in pixels.
    pub size: u32,
    pub step: f64,
    pub tolerance: f64,
    /// Flips the sign of the analytic opacity gradient. Harness self-test.
    pub inject_opacity_sign_error: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            scenes: 20,
            gaussians: 10,
            size: 32,
            step: 1e-4,
            tolerance: 1e-3,
            inject_opacity_sign_error: false,
        }
    }
}

/// Worst relative error seen for one parameter class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassResult {
    pub name: String,
    pub worst_rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl ClassResult {
    fn new(name: &str) -> Self {
        ClassResult {
            name: name.to_string(),
            worst_rel_err: 0.0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.worst_rel_err <= tolerance
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub seed: u64,
    pub scenes: usize,
    pub tolerance: f64,
    pub classes: Vec<ClassResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn failing(&self) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| !c.passed(self.tolerance))
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn class(&self, name: &str) -> Option<&ClassResult> {
        self.classes.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck seed={} scenes={} tolerance={:e}",
            self.seed, self.scenes, self.tolerance
        )?;
        writeln!(
            f,
            "{:<18} {:>12} {:>14} {:>14} {:>8} {:>8}  status",
            "class", "worst_rel", "analytic", "numeric", "checked", "skipped"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<18} {:>12.3e} {:>14.6e} {:>14.6e} {:>8} {:>8}  {}",
                c.name,
                c.worst_rel_err,
                c.analytic,
                c.numeric,
                c.checked,
                c.skipped,
                if c.passed(self.tolerance) { "PASS" } else { "FAIL" }
            )?;
        }
        writeln!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-9)
}

const CLOUD_CLASSES: [&str; 6] = ["position", "rotation", "scale", "opacity", "sh_dc", "sh_rest"];
const OFFSET_CLASSES: [&str; 3] = ["offset_xyz", "offset_rot", "offset_scale"];
const TIME: f64 = 0.37;

struct Scene {
    cloud: GaussianCloud<f64>,
    net: DeformNet<f64>,
    camera: Camera,
    target: ImageBuffer<f64>,
    background: [f64; 3],
}

fn mini_net_config() -> DeformNetConfig {
    DeformNetConfig {
        depth: 3,
        width: 8,
        skip_layer: Some(1),
        pos_levels: 2,
        time_levels: 2,
    }
}

fn random_scene(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Scene {
    let mut cloud = GaussianCloud::empty(1);
    let rest = cloud.rest_stride();
    for _ in 0..opts.gaussians {
        let p = [0; 3].map(|_| rng.random_range(-0.6..0.6));
        let q = [0; 4].map(|_| StandardNormal.sample(rng));
        let s = [0; 3].map(|_| rng.random_range(0.12f64..0.3).ln());
        let o = rng.random_range(-1.5..1.5);
        let dc = [0; 3].map(|_| rng.random_range(-0.5..1.5));
        let sh_rest: Vec<f64> = (0..rest).map(|_| rng.random_range(-0.2..0.2)).collect();
        cloud.push(p, q, s, o, dc, &sh_rest);
    }
    let mut net = DeformNet::new(mini_net_config(), rng).expect("valid miniature config");
    let width = net.config.width;
    let head = |out: usize, rng: &mut ChaCha8Rng| {
        let mut l = Linear::uniform(width, out, rng);
        l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= 0.1);
        l
    };
    net.head_xyz = head(3, rng);
    net.head_rot = head(4, rng);
    net.head_scale = head(3, rng);

    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let eye = Vector3::new(3.0 * azimuth.cos(), 3.0 * azimuth.sin(), rng.random_range(-1.0..1.0));
    let size = opts.size;
    let camera = Camera::look_at(
        size,
        size,
        1.2 * size as f64,
        eye,
        Vector3::zeros(),
        Vector3::new(0.0, 0.0, 1.0),
        TIME,
    )
    .expect("orbit camera is valid");
    let rgb = (0..size as usize * size as usize * 3)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    Scene {
        cloud,
        net,
        camera,
        target: ImageBuffer::from_rgb(size as usize, size as usize, rgb),
        background: [0.1, 0.2, 0.3],
    }
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

impl Scene {
    fn setup(&self) -> FrameSetup<'_, f64> {
        FrameSetup {
            camera: &self.camera,
            time: TIME,
            time_noise: 0.0,
            sh_degree: self.cloud.sh_degree,
            background: self.background,
            raster: RasterConfig::exact(),
        }
    }

    /// Loss and a branch fingerprint for fixed offsets.
    fn loss_with_offsets(&self, cloud: &GaussianCloud<f64>, offsets: &Offsets<f64>) -> (f64, u64) {
        let splats = apply_offsets(cloud, Some(offsets), cloud.sh_degree);
        let mut ws = prepare(&splats, &self.camera, &RasterConfig::exact());
        let image = rasterize_forward(&mut ws, self.background);
        let loss = photometric_loss(&image, &self.target, SSIM_WEIGHT).expect("shapes match");
        let mut h = ws.fingerprint();
        for (r, t) in image.rgb.iter().zip(&self.target.rgb) {
            h = mix(h, (r > t) as u64 + 2 * (r == t) as u64);
        }
        for i in 0..cloud.len() {
            for k in 0..3 {
                let s = cloud.log_scales[i][k].exp() + offsets.scale[i][k];
                h = mix(h, (s > SCALE_FLOOR) as u64);
            }
        }
        (loss.total, h)
    }

    /// Loss through the whole pipeline, network included.
    fn loss_full(&self, net: &DeformNet<f64>) -> (f64, u64) {
        let (offsets, cache) = net.forward(&self.cloud.positions, TIME, 0.0);
        let (loss, h) = self.loss_with_offsets(&self.cloud, &offsets);
        (loss, mix(h, cache.activation_pattern()))
    }
}

fn cloud_params_mut<'a>(c: &'a mut GaussianCloud<f64>, class: &str) -> &'a mut [f64] {
    match class {
        "position" => c.positions.as_flattened_mut(),
        "rotation" => c.rotations.as_flattened_mut(),
        "scale" => c.log_scales.as_flattened_mut(),
        "opacity" => &mut c.opacity_logits,
        "sh_dc" => c.sh_dc.as_flattened_mut(),
        "sh_rest" => &mut c.sh_rest,
        _ => unreachable!("unknown cloud class {class}"),
    }
}

fn offset_params_mut<'a>(o: &'a mut Offsets<f64>, class: &str) -> &'a mut [f64] {
    match class {
        "offset_xyz" => o.xyz.as_flattened_mut(),
        "offset_rot" => o.rot.as_flattened_mut(),
        "offset_scale" => o.scale.as_flattened_mut(),
        _ => unreachable!("unknown offset class {class}"),
    }
}

fn nth_layer(net: &mut DeformNet<f64>, i: usize) -> &mut Linear<f64> {
    net.layers_mut().swap_remove(i)
}

fn layer_params_mut(l: &mut Linear<f64>) -> impl Iterator<Item = &mut f64> {
    l.weight.iter_mut().chain(l.bias.iter_mut())
}

/// Compares `analytic` against central differences of `eval`, which returns
/// the loss and branch fingerprint with parameter `i` shifted by `delta`.
fn compare(
    acc: &mut ClassResult,
    analytic: &[f64],
    base_fp: u64,
    h: f64,
    mut eval: impl FnMut(usize, f64) -> (f64, u64),
) {
    for (i, &a) in analytic.iter().enumerate() {
        let (lp, fp) = eval(i, h);
        let (lm, fm) = eval(i, -h);
        if fp != base_fp || fm != base_fp {
            acc.skipped += 1;
            continue;
        }
        let n = (lp - lm) / (2.0 * h);
        let e = relative_error(a, n);
        acc.checked += 1;
        if e > acc.worst_rel_err || e.is_nan() {
            acc.worst_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            acc.analytic = a;
            acc.numeric = n;
        }
    }
}

fn check_scene(scene: &Scene, opts: &GradcheckOptions, results: &mut [ClassResult]) {
    let h = opts.step;
    let setup = scene.setup();
    let frame = forward_frame(&scene.cloud, Some(&scene.net), &setup);
    let loss = photometric_loss(&frame.image, &scene.target, SSIM_WEIGHT).expect("shapes match");
    let mut grads = backward_frame(&frame, &scene.cloud, Some(&scene.net), &scene.camera, &loss.grad);
    if opts.inject_opacity_sign_error {
        grads.cloud.opacity_logits.iter_mut().for_each(|g| *g = -*g);
    }
    let offsets = frame.offsets.expect("network present");
    let (base, net_fp) = scene.loss_full(&scene.net);
    debug_assert!((base - loss.total).abs() <= 1e-12 * base.abs().max(1.0));
    let (_, base_fp) = scene.loss_with_offsets(&scene.cloud, &offsets);
    let mut slot = results.iter_mut();

    // Canonical parameters, with the network's positional input frozen.
    for class in CLOUD_CLASSES {
        let analytic = cloud_params_mut(&mut grads.cloud, class).to_vec();
        let mut c = scene.cloud.clone();
        compare(slot.next().unwrap(), &analytic, base_fp, h, |i, d| {
            let v = cloud_params_mut(&mut c, class)[i];
            cloud_params_mut(&mut c, class)[i] = v + d;
            let (l, fp) = scene.loss_with_offsets(&c, &offsets);
            cloud_params_mut(&mut c, class)[i] = v;
            (l, fp)
        });
    }

    let mut og = grads.offsets.expect("network present");
    for class in OFFSET_CLASSES {
        let analytic = offset_params_mut(&mut og, class).to_vec();
        let mut o = offsets.clone();
        compare(slot.next().unwrap(), &analytic, base_fp, h, |i, d| {
            let v = offset_params_mut(&mut o, class)[i];
            offset_params_mut(&mut o, class)[i] = v + d;
            let (l, fp) = scene.loss_with_offsets(&scene.cloud, &o);
            offset_params_mut(&mut o, class)[i] = v;
            (l, fp)
        });
    }

    let mut ng = grads.net.expect("network present");
    let count = ng.layers().len();
    for layer in 0..count {
        let analytic: Vec<f64> = layer_params_mut(nth_layer(&mut ng, layer)).map(|v| *v).collect();
        let mut net = scene.net.clone();
        compare(slot.next().unwrap(), &analytic, net_fp, h, |i, d| {
            let v = layer_params_mut(nth_layer(&mut net, layer)).nth(i).unwrap();
            let orig = *v;
            *v = orig + d;
            let out = scene.loss_full(&net);
            *layer_params_mut(nth_layer(&mut net, layer)).nth(i).unwrap() = orig;
            out
        });
    }
}

/// Runs every class on `opts.scenes` seeded scenes.
pub fn run_gradcheck(opts: &GradcheckOptions) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let layer_names: Vec<String> = DeformNet::<f64>::new(mini_net_config(), &mut ChaCha8Rng::seed_from_u64(0))
        .expect("valid miniature config")
        .layers()
        .into_iter()
        .map(|(n, _)| format!("mlp.{n}"))
        .collect();
    let mut classes: Vec<ClassResult> = CLOUD_CLASSES
        .iter()
        .chain(OFFSET_CLASSES.iter())
        .map(|c| ClassResult::new(c))
        .chain(layer_names.iter().map(|n| ClassResult::new(n)))
        .collect();
    for _ in 0..opts.scenes {
        let scene = random_scene(&mut rng, opts);
        check_scene(&scene, opts, &mut classes);
    }
    GradcheckReport {
        seed: opts.seed,
        scenes: opts.scenes,
        tolerance: opts.tolerance,
        classes,
    }
}
