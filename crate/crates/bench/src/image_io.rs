//! 8-bit RGB images to and from `[0, 1]` tensors.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use rtsr_core::resample::quantize_8bit;
use rtsr_core::{Shape, Tensor};

use crate::error::{BenchError, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, px[c] as f32 / 255.0);
        }
    }
    t
}

/// Rounds to 8 bits; the tensor must be a single RGB image.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(BenchError::Data(format!("expected a single RGB image, got {s}")));
    }
    let q = quantize_8bit(t);
    Ok(RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| (q.at(0, c, y as usize, x as usize) * 255.0).round() as u8))
    }))
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| BenchError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rgb_to_tensor(&img.to_rgb8()))
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_rgb(t)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| BenchError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
