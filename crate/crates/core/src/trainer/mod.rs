//! Training loop, rendering and evaluation entry points.

mod config;
mod eval;
mod render;
mod train;

pub use config::TrainConfig;
pub use eval::{evaluate, EvalReport, EvalRow};
pub use render::{depth_visualization, render_checkpoint, render_cmd, RenderOutput};
pub use train::{run, train, IterationLog, TrainFrame, TrainOutcome, Trainer};

use image::imageops::FilterType;
use rayon::prelude::*;

use crate::error::Result;
use crate::geom::Camera;
use crate::raster::{ImageBuffer, RasterConfig};
use crate::scene::{SceneDataset, Split};

/// Renderer settings used everywhere in training and evaluation.
pub fn raster_config() -> RasterConfig {
    RasterConfig::default()
}

/// Camera intrinsics rescaled to `width × height`.
pub fn rescale_camera(cam: &Camera, width: u32, height: u32) -> Camera {
    let sx = width as f64 / cam.width as f64;
    let sy = height as f64 / cam.height as f64;
    Camera {
        width,
        height,
        fx: cam.fx * sx,
        fy: cam.fy * sy,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        ..cam.clone()
    }
}

/// Training resolution for a dataset: the longest side becomes
/// `resolution` (0 keeps the native size).
pub fn target_size(dataset: &SceneDataset, resolution: u32) -> (u32, u32) {
    let (w, h) = (dataset.width, dataset.height);
    if resolution == 0 || resolution == w.max(h) {
        return (w, h);
    }
    let s = resolution as f64 / w.max(h) as f64;
    (((w as f64 * s).round() as u32).max(1), ((h as f64 * s).round() as u32).max(1))
}

fn resample(img: ImageBuffer<f32>, width: u32, height: u32) -> ImageBuffer<f32> {
    if img.width == width as usize && img.height == height as usize {
        return img;
    }
    let src = image::Rgb32FImage::from_raw(img.width as u32, img.height as u32, img.rgb).expect("sized buffer");
    let out = image::imageops::resize(&src, width, height, FilterType::Triangle);
    ImageBuffer::from_rgb(width as usize, height as usize, out.into_raw())
}

/// Loads a split as (camera, target) pairs at the configured resolution.
pub fn load_frames(dataset: &SceneDataset, split: Split, cfg: &TrainConfig) -> Result<Vec<TrainFrame>> {
    let (w, h) = target_size(dataset, cfg.resolution);
    let images = dataset.load_images(split, cfg.background)?;
    Ok(dataset
        .frames(split)
        .par_iter()
        .zip(images)
        .map(|(f, img)| TrainFrame {
            camera: rescale_camera(&f.camera, w, h),
            image: resample(img, w, h),
        })
        .collect())
}

/// SH degree in use after `iteration` completed steps.
pub fn active_sh_degree(cfg: &TrainConfig, iteration: usize) -> usize {
    cfg.sh_degree.min(iteration / cfg.sh_increase_interval)
}
