use std::path::Path;

use image::{DynamicImage, RgbImage, RgbaImage};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

/// Alpha-composites onto `background`; RGB inputs pass through. Output is
/// linear `[0, 1]` floats (8-bit values divided by 255).
pub fn composite_background(img: &DynamicImage, background: [f64; 3]) -> ImageBuffer<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut rgb = Vec::with_capacity(w * h * 3);
    if img.color().has_alpha() {
        let rgba = img.to_rgba32f();
        for px in rgba.pixels() {
            let a = px.0[3] as f64;
            for ch in 0..3 {
                rgb.push((px.0[ch] as f64 * a + background[ch] * (1.0 - a)) as f32);
            }
        }
    } else {
        for px in img.to_rgb8().pixels() {
            for ch in 0..3 {
                rgb.push(px.0[ch] as f32 / 255.0);
            }
        }
    }
    ImageBuffer::from_rgb(w, h, rgb)
}

pub fn load_image(path: &Path, background: [f64; 3]) -> Result<ImageBuffer<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(composite_background(&img, background))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB PNG, values clamped to `[0, 1]`.
pub fn write_png<T: crate::Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    let data: Vec<u8> = img.rgb.iter().map(|v| quantize(v.to_f64())).collect();
    let out = RgbImage::from_raw(img.width as u32, img.height as u32, data).expect("buffer sized from image");
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 8-bit RGBA PNG using the accumulated alpha.
pub fn write_rgba_png<T: crate::Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    let mut data = Vec::with_capacity(img.width * img.height * 4);
    for (px, a) in img.rgb.chunks_exact(3).zip(&img.alpha) {
        data.extend(px.iter().map(|v| quantize(v.to_f64())));
        data.push(quantize(a.to_f64()));
    }
    let out = RgbaImage::from_raw(img.width as u32, img.height as u32, data).expect("buffer sized from image");
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
