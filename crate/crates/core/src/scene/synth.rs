use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{camera_manifest_frame, write_manifest, ManifestFrame};
use super::image_io::write_png;
use crate::error::{Error, Result};
use crate::geom::{Camera, GaussianCloud, SH_C0};
use crate::raster::{reference_render, RasterConfig, Splats};
use crate::real::logit;

/// Procedural dynamic scene: coloured blobs of Gaussians moving along
/// sinusoidal paths, observed by a single orbiting camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub blobs: usize,
    pub gaussians_per_blob: usize,
    pub frames: usize,
    /// Frames with `index % test_every == test_every / 2` are held out.
    pub test_every: usize,
    pub width: u32,
    pub height: u32,
    pub camera_angle_x: f64,
    pub orbit_radius: f64,
    pub orbit_elevation_deg: f64,
    pub elevation_wobble_deg: f64,
    pub orbit_revolutions: f64,
    pub background: [f64; 3],
    /// Blob centres are drawn inside a ball of this radius.
    pub scene_radius: f64,
    /// Spread of a blob's Gaussians around its centre.
    pub blob_radius: f64,
    pub translation_amplitude: f64,
    /// Radians.
    pub rotation_amplitude: f64,
    /// Recorded training times are perturbed by `U(-j, j) · Δt`.
    pub time_jitter: f64,
    /// Explicit blobs; replaces the random ones when non-empty.
    pub motion: Vec<BlobSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            blobs: 8,
            gaussians_per_blob: 6,
            frames: 72,
            test_every: 6,
            width: 128,
            height: 128,
            camera_angle_x: 0.8,
            orbit_radius: 4.0,
            orbit_elevation_deg: 25.0,
            elevation_wobble_deg: 10.0,
            orbit_revolutions: 1.0,
            background: [0.0; 3],
            scene_radius: 0.9,
            blob_radius: 0.22,
            translation_amplitude: 0.3,
            rotation_amplitude: 0.6,
            time_jitter: 0.0,
            motion: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.test_every == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic spec needs ≥ 2 frames, a test stride and a resolution".into()));
        }
        if self.motion.is_empty() && (self.blobs == 0 || self.gaussians_per_blob == 0) {
            return Err(Error::Config("synthetic spec has no Gaussians".into()));
        }
        if !(self.time_jitter >= 0.0) {
            return Err(Error::Config("time_jitter must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_test_frame(&self, k: usize) -> bool {
        k % self.test_every == self.test_every / 2
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / (self.frames - 1) as f64
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    /// Orbit camera of frame `k` (world +z up), carrying the true time.
    pub fn camera(&self, k: usize) -> Result<Camera> {
        let s = k as f64 / self.frames as f64;
        let az = 2.0 * std::f64::consts::PI * self.orbit_revolutions * s;
        let el = (self.orbit_elevation_deg + self.elevation_wobble_deg * (6.0 * std::f64::consts::PI * s).sin()).to_radians();
        let eye = self.orbit_radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        Camera::look_at(
            self.width,
            self.height,
            self.focal(),
            eye,
            Vector3::zeros(),
            Vector3::z(),
            self.frame_time(k),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtGaussian {
    /// Offset from the blob centre in the blob's rest frame.
    pub offset: [f64; 3],
    /// Unit `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

/// One rigid blob. Centre `c + a ⊙ sin(2π f t + φ)`; orientation a rotation
/// about `axis` by `Θ sin(2π f t + ψ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub center: [f64; 3],
    pub translation_amplitude: [f64; 3],
    pub translation_phase: [f64; 3],
    pub frequency: f64,
    pub rotation_axis: [f64; 3],
    pub rotation_amplitude: f64,
    pub rotation_phase: f64,
    pub gaussians: Vec<GtGaussian>,
}

impl BlobSpec {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI * self.frequency * t;
        Vector3::from_fn(|k, _| self.center[k] + self.translation_amplitude[k] * (w + self.translation_phase[k]).sin())
    }

    pub fn rotation_at(&self, t: f64) -> UnitQuaternion<f64> {
        let w = 2.0 * std::f64::consts::PI * self.frequency * t;
        let angle = self.rotation_amplitude * (w + self.rotation_phase).sin();
        let axis = Vector3::from(self.rotation_axis);
        if axis.norm() == 0.0 || angle == 0.0 {
            return UnitQuaternion::identity();
        }
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub file_path: String,
    pub split: String,
    pub true_time: f64,
    pub recorded_time: f64,
}

/// Sidecar written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub blobs: Vec<BlobSpec>,
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    pub const FILE_NAME: &'static str = "ground_truth.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    /// All Gaussians posed at time `t`, degree-0 colour.
    pub fn cloud_at(&self, t: f64) -> GaussianCloud<f64> {
        let mut cloud = GaussianCloud::empty(0);
        for blob in &self.blobs {
            let c = blob.center_at(t);
            let r = blob.rotation_at(t);
            for g in &blob.gaussians {
                let p = c + r * Vector3::from(g.offset);
                let q0 = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    g.rotation[0],
                    g.rotation[1],
                    g.rotation[2],
                    g.rotation[3],
                ));
                let q = (r * q0).into_inner();
                cloud.push(
                    [p.x, p.y, p.z],
                    [q.w, q.i, q.j, q.k],
                    g.scale.map(f64::ln),
                    logit(g.opacity),
                    g.color.map(|v| (v - 0.5) / SH_C0),
                    &[],
                );
            }
        }
        cloud
    }
}

fn random_blobs(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<BlobSpec> {
    let tau = 2.0 * std::f64::consts::PI;
    (0..spec.blobs)
        .map(|_| {
            let center = loop {
                let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if v.norm() <= 1.0 {
                    break v * spec.scene_radius;
                }
            };
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.95));
            let unit = |rng: &mut ChaCha8Rng| {
                Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal)).normalize()
            };
            let dir = unit(rng);
            let amp = spec.translation_amplitude * rng.random_range(0.5..1.0);
            let axis = unit(rng);
            let gaussians = (0..spec.gaussians_per_blob)
                .map(|_| {
                    let offset: [f64; 3] =
                        std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * 0.5 * spec.blob_radius);
                    let q = nalgebra::Vector4::<f64>::from_fn(|_, _| rng.sample(StandardNormal)).normalize();
                    let scale: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05f64.ln()..0.14f64.ln()).exp());
                    let color = base.map(|c| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
                    GtGaussian {
                        offset,
                        rotation: [q[0], q[1], q[2], q[3]],
                        scale,
                        opacity: rng.random_range(0.7..0.95),
                        color,
                    }
                })
                .collect();
            BlobSpec {
                center: center.into(),
                translation_amplitude: (dir * amp).into(),
                translation_phase: std::array::from_fn(|_| rng.random_range(0.0..tau)),
                frequency: 1.0,
                rotation_axis: axis.into(),
                rotation_amplitude: spec.rotation_amplitude * rng.random_range(0.5..1.0),
                rotation_phase: rng.random_range(0.0..tau),
                gaussians,
            }
        })
        .collect()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Renders every frame with the reference renderer and writes the
/// manifests, PNGs and the ground-truth sidecar under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = if spec.motion.is_empty() {
        random_blobs(spec, &mut rng)
    } else {
        spec.motion.clone()
    };
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    jitter_rng.set_stream(1);
    let dt = 1.0 / (spec.frames - 1) as f64;

    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let test = spec.is_test_frame(k);
        let true_time = spec.frame_time(k);
        let recorded_time = if !test && spec.time_jitter > 0.0 {
            let j = spec.time_jitter * dt;
            (true_time + jitter_rng.random_range(-j..=j)).clamp(0.0, 1.0)
        } else {
            true_time
        };
        let split = if test { "test" } else { "train" };
        frames.push(GtFrame {
            file_path: format!("./{split}/r_{k:03}"),
            split: split.into(),
            true_time,
            recorded_time,
        });
    }
    let gt = GroundTruth {
        spec: spec.clone(),
        blobs,
        frames,
    };

    create_dir(&out_dir.join("train"))?;
    create_dir(&out_dir.join("test"))?;
    let cfg = RasterConfig::default();
    (0..spec.frames).into_par_iter().try_for_each(|k| -> Result<()> {
        let f = &gt.frames[k];
        let cam = spec.camera(k)?;
        let splats = Splats::from_cloud(&gt.cloud_at(f.true_time), 0);
        let img = reference_render(&splats, &cam, spec.background, &cfg);
        let path: PathBuf = out_dir.join(format!("{}.png", f.file_path.trim_start_matches("./")));
        write_png(&path, &img)
    })?;

    let mut train: Vec<ManifestFrame> = Vec::new();
    let mut test: Vec<ManifestFrame> = Vec::new();
    for (k, f) in gt.frames.iter().enumerate() {
        let mf = camera_manifest_frame(&spec.camera(k)?, f.file_path.clone(), f.recorded_time);
        if f.split == "test" {
            test.push(mf);
        } else {
            train.push(mf);
        }
    }
    write_manifest(&out_dir.join("transforms_train.json"), spec.camera_angle_x, &train)?;
    write_manifest(&out_dir.join("transforms_test.json"), spec.camera_angle_x, &test)?;
    let sidecar = out_dir.join(GroundTruth::FILE_NAME);
    let text = serde_json::to_string_pretty(&gt).expect("ground truth serialises");
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let s = SynthSpec::default();
        let test = (0..s.frames).filter(|&k| s.is_test_frame(k)).count();
        assert_eq!((s.frames - test, test), (60, 12));
        assert!(!s.is_test_frame(0) && !s.is_test_frame(s.frames - 1));
    }

    #[test]
    fn toml_defaults_and_unknown_keys() {
        let s = SynthSpec::from_toml("seed = 3\nwidth = 64\n").unwrap();
        assert_eq!((s.seed, s.width, s.height), (3, 64, 128));
        assert!(SynthSpec::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn motion_closed_form() {
        let b = BlobSpec {
            center: [0.1, 0.2, 0.3],
            translation_amplitude: [0.5, 0.0, 0.0],
            translation_phase: [0.0; 3],
            frequency: 1.0,
            rotation_axis: [0.0, 0.0, 1.0],
            rotation_amplitude: 0.0,
            rotation_phase: 0.0,
            gaussians: vec![],
        };
        for t in [0.0, 0.1, 0.25, 0.7] {
            let c = b.center_at(t);
            assert!((c.x - (0.1 + 0.5 * (2.0 * std::f64::consts::PI * t).sin())).abs() < 1e-15);
            assert_eq!((c.y, c.z), (0.2, 0.3));
        }
    }

    #[test]
    fn cameras_look_at_origin() {
        let s = SynthSpec::default();
        for k in [0, 17, 71] {
            let cam = s.camera(k).unwrap();
            let p = cam.to_camera(&Vector3::<f64>::zeros());
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
            assert!((p.z - s.orbit_radius).abs() < 1e-12);
        }
    }
}
