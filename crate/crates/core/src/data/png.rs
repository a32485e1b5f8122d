use std::path::Path;

use advlab_tensor::{Real, Tensor};
use image::{Rgb, RgbImage};

use crate::error::{invalid, io_err, CoreError, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 3×H×W image in `[0, 1]` as an 8-bit RGB image.
pub fn to_rgb8<T: Real>(img: &Tensor<T>) -> Result<RgbImage> {
    let [3, h, w] = *img.shape() else {
        return Err(invalid("image", format!("expected 3×H×W, got {:?}", img.shape())));
    };
    let d = img.data();
    let hw = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| quantize(d[c * hw + p].to_f64_lossless())))
    }))
}

pub fn from_rgb8<T: Real>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut data = vec![T::zero(); 3 * hw];
    for (x, y, px) in img.enumerate_pixels() {
        let p = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * hw + p] = T::lit(px.0[c] as f64 / 255.0);
        }
    }
    Tensor::new(vec![3, h, w], data).expect("consistent shape")
}

/// Writes an 8-bit PNG; values are clamped to `[0, 1]` and rounded.
pub fn save_png<T: Real>(img: &Tensor<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    to_rgb8(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn load_png<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(from_rgb8(&img.to_rgb8()))
}

fn image_err(path: &Path, e: image::ImageError) -> CoreError {
    match e {
        image::ImageError::IoError(source) => CoreError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CoreError::Format {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    }
}
