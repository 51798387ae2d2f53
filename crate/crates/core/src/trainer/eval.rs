use std::path::Path;

use serde::Serialize;

use super::config::TrainConfig;
use super::load_frames;
use super::render::render_checkpoint;
use crate::error::{Error, Result};
use crate::optim::{psnr, ssim};
use crate::scene::{Checkpoint, SceneDataset, Split};

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub frame: usize,
    pub file: String,
    pub time: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Over finite rows only.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Rows with infinite PSNR left out of `mean_psnr`.
    pub infinite_rows: usize,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let mean_psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len().max(1) as f64;
        EvalReport {
            infinite_rows: rows.len() - finite.len(),
            rows,
            mean_psnr,
            mean_ssim,
        }
    }

    /// CSV with header `frame,file,time,psnr,ssim,note`, one row per frame
    /// and a closing `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "file", "time", "psnr", "ssim", "note"])?;
        for r in &self.rows {
            w.write_record([
                r.frame.to_string(),
                r.file.clone(),
                format!("{}", r.time),
                format!("{}", r.psnr),
                format!("{}", r.ssim),
                String::new(),
            ])?;
        }
        let note = if self.infinite_rows > 0 {
            format!("{} frame(s) with infinite PSNR excluded from the mean", self.infinite_rows)
        } else {
            String::new()
        };
        w.write_record([
            "mean".to_string(),
            String::new(),
            String::new(),
            format!("{}", self.mean_psnr),
            format!("{}", self.mean_ssim),
            note,
        ])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Renders every frame of `split` at its camera and time with zero noise
/// and compares against the dataset images.
pub fn evaluate(ckpt: &Checkpoint, dataset: &SceneDataset, split: Split) -> Result<EvalReport> {
    let cfg = TrainConfig::from_toml(&ckpt.config)?;
    let frames = load_frames(dataset, split, &cfg)?;
    if frames.is_empty() {
        return Err(Error::Dataset {
            path: dataset.root.clone(),
            msg: format!("{split:?} split is empty"),
        });
    }
    let mut rows = Vec::with_capacity(frames.len());
    for (k, (f, meta)) in frames.iter().zip(dataset.frames(split)).enumerate() {
        let img = render_checkpoint(ckpt, &f.camera)?;
        if !img.same_shape(&f.image) {
            return Err(Error::InvalidInput(format!(
                "render is {}×{} but {} is {}×{}",
                img.width,
                img.height,
                meta.image_path.display(),
                f.image.width,
                f.image.height
            )));
        }
        rows.push(EvalRow {
            frame: k,
            file: meta.image_path.display().to_string(),
            time: f.camera.time,
            psnr: psnr(&img.rgb, &f.image.rgb),
            ssim: ssim(&img.rgb, &f.image.rgb, img.width, img.height, 3),
        });
    }
    Ok(EvalReport::from_rows(rows))
}
