use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Convert an 8-bit RGB image to a `[3, h, w]` tensor in `[-1, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let d = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            d[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    t
}

/// `(v + 1) * 127.5`, rounded half to even, clamped to `[0, 255]`.
pub fn quantize(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Convert a `[3, h, w]` (or `[1, 3, h, w]`) tensor in `[-1, 1]` to 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let shape = t.shape();
    let (c, h, w) = match shape {
        [c, h, w] => (*c, *h, *w),
        [1, c, h, w] => (*c, *h, *w),
        _ => return Err(Error::invalid(format!("cannot render tensor of shape {shape:?}"))),
    };
    ensure!(c == 3, "can only render 3-channel images, got {c}");
    let d = t.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| quantize(d[(ch * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    }))
}

/// Decode any supported image, replicate grayscale to RGB, resize to `size x size`.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let rgb = if rgb.dimensions() == (size as u32, size as u32) {
        rgb
    } else {
        image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
    };
    Ok(rgb_to_tensor(&rgb))
}

pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let img = tensor_to_rgb(t)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
