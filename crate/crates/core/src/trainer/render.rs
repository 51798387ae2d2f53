use std::path::{Path, PathBuf};

use super::config::TrainConfig;
use super::{active_sh_degree, raster_config};
use crate::error::Result;
use crate::geom::Camera;
use crate::pipeline::{forward_frame, FrameSetup};
use crate::raster::ImageBuffer;
use crate::scene::{load_checkpoint, write_png, Checkpoint, PoseFile};

/// Renders a checkpoint at `camera` (its `time` is used, zero time noise).
pub fn render_checkpoint(ckpt: &Checkpoint, camera: &Camera) -> Result<ImageBuffer<f32>> {
    let cfg = TrainConfig::from_toml(&ckpt.config)?;
    let setup = FrameSetup {
        camera,
        time: camera.time as f32,
        time_noise: 0.0,
        sh_degree: active_sh_degree(&cfg, ckpt.iteration as usize),
        background: cfg.background.map(|v| v as f32),
        raster: raster_config(),
    };
    Ok(forward_frame(&ckpt.cloud, Some(&ckpt.net), &setup).image)
}

/// Greyscale depth: covered pixels (alpha ≥ 0.5) min-max scaled so nearer
/// is darker; everything else is white.
pub fn depth_visualization(img: &ImageBuffer<f32>) -> ImageBuffer<f32> {
    let depth = img.depth.as_ref().expect("rasterizer always produces depth");
    let covered = |k: usize| img.alpha[k] >= 0.5;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for (k, &d) in depth.iter().enumerate() {
        if covered(k) {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    let span = (hi - lo).max(1e-12);
    let mut rgb = Vec::with_capacity(depth.len() * 3);
    for (k, &d) in depth.iter().enumerate() {
        let v = if covered(k) { 0.9 * (d - lo) / span } else { 1.0 };
        rgb.extend_from_slice(&[v; 3]);
    }
    ImageBuffer::from_rgb(img.width, img.height, rgb)
}

pub struct RenderOutput {
    pub color: PathBuf,
    pub depth: Option<PathBuf>,
}

/// Renders `ckpt_path` at the camera in `pose_path` and time `time`
/// (clamped to `[0, 1]`) into `out` and, with `depth`, `<out>_depth.png`.
pub fn render_cmd(ckpt_path: &Path, pose_path: &Path, time: f64, depth: bool, out: &Path) -> Result<RenderOutput> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let t = if (0.0..=1.0).contains(&time) {
        time
    } else {
        log::warn!("time {time} is outside [0, 1]; clamping");
        time.clamp(0.0, 1.0)
    };
    let camera = PoseFile::load(pose_path)?.camera(t)?;
    let img = render_checkpoint(&ckpt, &camera)?;
    write_png(out, &img)?;
    let depth_path = if depth {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("render");
        let p = out.with_file_name(format!("{stem}_depth.png"));
        write_png(&p, &depth_visualization(&img))?;
        Some(p)
    } else {
        None
    };
    Ok(RenderOutput {
        color: out.to_path_buf(),
        depth: depth_path,
    })
}
