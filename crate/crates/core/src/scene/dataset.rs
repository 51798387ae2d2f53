use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image_io::load_image;
use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::raster::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "transforms_train.json",
            Split::Test => "transforms_test.json",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub file_path: String,
    pub time: f64,
    /// OpenGL camera-to-world, row-major.
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_y: Option<f64>,
    frames: Vec<ManifestFrame>,
}

/// A single camera for rendering, in the manifest convention.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseFile {
    pub width: u32,
    pub height: u32,
    pub camera_angle_x: f64,
    pub transform_matrix: [[f64; 4]; 4],
}

impl PoseFile {
    pub fn from_camera(cam: &Camera) -> Self {
        let m = cam.gl_camera_to_world();
        PoseFile {
            width: cam.width,
            height: cam.height,
            camera_angle_x: 2.0 * (0.5 * cam.width as f64 / cam.fx).atan(),
            transform_matrix: matrix_rows(&m),
        }
    }

    pub fn camera(&self, time: f64) -> Result<Camera> {
        let focal = focal_from_angle(self.camera_angle_x, self.width)?;
        Camera::from_gl_camera_to_world(self.width, self.height, focal, &from_rows(&self.transform_matrix), time)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| json_error(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct DatasetFrame {
    pub image_path: PathBuf,
    /// Carries the normalised timestamp.
    pub camera: Camera,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub width: u32,
    pub height: u32,
    pub train: Vec<DatasetFrame>,
    pub test: Vec<DatasetFrame>,
    /// Radius of the training camera centres around their mean, × 1.1.
    pub scene_extent: f64,
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    }
}

fn from_rows(m: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| m[r][c])
}

fn matrix_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

fn focal_from_angle(angle: f64, extent: u32) -> Result<f64> {
    if !(angle > 0.0 && angle < std::f64::consts::PI) {
        return Err(Error::InvalidInput(format!("field of view {angle} rad is out of range")));
    }
    Ok(0.5 * extent as f64 / (0.5 * angle).tan())
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

fn resolve_image(root: &Path, file_path: &str) -> PathBuf {
    let mut p = root.join(file_path.trim_start_matches("./"));
    if p.extension().is_none() {
        p.set_extension("png");
    }
    p
}

/// Times already inside `[0, 1]` are kept; otherwise non-negative times
/// are divided by the maximum and anything else is min-max scaled.
fn normalize_times(times: &mut [f64]) {
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo >= 0.0 && hi <= 1.0 {
        return;
    }
    let (off, span) = if lo >= 0.0 { (0.0, hi) } else { (lo, hi - lo) };
    for t in times.iter_mut() {
        *t = if span > 0.0 { (*t - off) / span } else { 0.0 };
    }
}

/// Loads a D-NeRF style directory (`transforms_{train,test}.json` plus
/// images). A missing test manifest yields an empty test split.
pub fn load_dataset(root: &Path) -> Result<SceneDataset> {
    let train_path = root.join(Split::Train.manifest_name());
    let test_path = root.join(Split::Test.manifest_name());
    let train = read_manifest(&train_path)?;
    let test = if test_path.exists() {
        Some(read_manifest(&test_path)?)
    } else {
        None
    };
    if train.frames.is_empty() {
        return Err(Error::Dataset {
            path: train_path,
            msg: "manifest lists no frames".into(),
        });
    }

    let first = resolve_image(root, &train.frames[0].file_path);
    let (width, height) = image::image_dimensions(&first).map_err(|source| Error::Image {
        path: first.clone(),
        source,
    })?;

    let mut all: Vec<(Split, &Path, &Manifest)> = vec![(Split::Train, &train_path, &train)];
    if let Some(t) = test.as_ref() {
        all.push((Split::Test, &test_path, t));
    }
    let mut times: Vec<f64> = all.iter().flat_map(|(_, _, m)| m.frames.iter().map(|f| f.time)).collect();
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Dataset {
            path: train_path,
            msg: "non-finite frame time".into(),
        });
    }
    normalize_times(&mut times);

    let mut out_train = Vec::new();
    let mut out_test = Vec::new();
    let mut k = 0;
    for (split, path, manifest) in all {
        let fx = focal_from_angle(manifest.camera_angle_x, width)?;
        if let Some(ay) = manifest.camera_angle_y {
            let fy = focal_from_angle(ay, height)?;
            if (fx - fy).abs() > 1e-3 * fx {
                return Err(Error::Dataset {
                    path: path.to_path_buf(),
                    msg: format!("non-square pixels (fx = {fx}, fy = {fy}) are not supported"),
                });
            }
        }
        for f in &manifest.frames {
            let image_path = resolve_image(root, &f.file_path);
            let (w, h) = image::image_dimensions(&image_path).map_err(|source| Error::Image {
                path: image_path.clone(),
                source,
            })?;
            if (w, h) != (width, height) {
                return Err(Error::Dataset {
                    path: image_path,
                    msg: format!("image is {w}×{h} but the dataset resolution is {width}×{height}"),
                });
            }
            let camera = Camera::from_gl_camera_to_world(width, height, fx, &from_rows(&f.transform_matrix), times[k])
                .map_err(|e| Error::Dataset {
                    path: path.to_path_buf(),
                    msg: format!("frame `{}`: {e}", f.file_path),
                })?;
            k += 1;
            let frame = DatasetFrame { image_path, camera };
            match split {
                Split::Train => out_train.push(frame),
                Split::Test => out_test.push(frame),
            }
        }
    }

    let centers: Vec<Vector3<f64>> = out_train.iter().map(|f| f.camera.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    Ok(SceneDataset {
        root: root.to_path_buf(),
        width,
        height,
        train: out_train,
        test: out_test,
        scene_extent: 1.1 * radius,
    })
}

impl SceneDataset {
    pub fn frames(&self, split: Split) -> &[DatasetFrame] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn load_images(&self, split: Split, background: [f64; 3]) -> Result<Vec<ImageBuffer<f32>>> {
        self.frames(split)
            .par_iter()
            .map(|f| load_image(&f.image_path, background))
            .collect()
    }

    /// Mean gap between sorted unique training timestamps.
    pub fn delta_t(&self) -> f64 {
        let mut t: Vec<f64> = self.train.iter().map(|f| f.camera.time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        if t.len() < 2 {
            return 0.0;
        }
        (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64
    }
}

/// Writes a manifest for `frames` with image paths relative to the root.
pub fn write_manifest(path: &Path, camera_angle_x: f64, frames: &[ManifestFrame]) -> Result<()> {
    let m = Manifest {
        camera_angle_x,
        camera_angle_y: None,
        frames: frames.to_vec(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serialises");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn camera_manifest_frame(cam: &Camera, file_path: String, time: f64) -> ManifestFrame {
    ManifestFrame {
        file_path,
        time,
        transform_matrix: matrix_rows(&cam.gl_camera_to_world()),
    }
}
