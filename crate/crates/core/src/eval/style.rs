//! Color statistics used as the style descriptor of generated images.

use crate::tensor::Tensor;

/// Pixels darker than this (HSV value in `[0, 1]`) count as background.
pub const FOREGROUND_VALUE: f64 = 0.3;

/// RGB in `[0, 1]` to `(hue in [0, 1), saturation, value)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, max)
}

/// Signed distance between two hues on the unit circle, in `[-0.5, 0.5)`.
pub fn hue_diff(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

/// Circular mean of hues in `[0, 1)`.
pub fn circular_mean(hues: &[f64]) -> f64 {
    let (s, c) = hues.iter().fold((0.0, 0.0), |(s, c), h| {
        let a = h * std::f64::consts::TAU;
        (s + a.sin(), c + a.cos())
    });
    (s.atan2(c) / std::f64::consts::TAU).rem_euclid(1.0)
}

/// RMS wrapped deviation from the circular mean; 0 for a single sample.
pub fn circular_std(hues: &[f64]) -> f64 {
    if hues.len() < 2 {
        return 0.0;
    }
    let m = circular_mean(hues);
    (hues.iter().map(|&h| hue_diff(h, m).powi(2)).sum::<f64>() / hues.len() as f64).sqrt()
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageStyle {
    pub mean_hue: f64,
    pub mean_saturation: f64,
    pub foreground_fraction: f64,
}

/// Style of one `[3, h, w]` or `[1, 3, h, w]` image in `[-1, 1]`: circular
/// mean hue and mean saturation over foreground pixels (all pixels when
/// the image has no foreground).
pub fn image_style(img: &Tensor<f32>) -> ImageStyle {
    let plane = img.len() / 3;
    let d = img.data();
    let to01 = |v: f32| ((v as f64 + 1.0) / 2.0).clamp(0.0, 1.0);
    let hsv: Vec<(f64, f64, f64)> = (0..plane)
        .map(|i| rgb_to_hsv(to01(d[i]), to01(d[plane + i]), to01(d[2 * plane + i])))
        .collect();
    let fg: Vec<&(f64, f64, f64)> = hsv.iter().filter(|p| p.2 > FOREGROUND_VALUE).collect();
    let fraction = fg.len() as f64 / plane.max(1) as f64;
    let pixels: Vec<&(f64, f64, f64)> = if fg.is_empty() {
        hsv.iter().collect()
    } else {
        fg
    };
    let hues: Vec<f64> = pixels.iter().map(|p| p.0).collect();
    ImageStyle {
        mean_hue: circular_mean(&hues),
        mean_saturation: pixels.iter().map(|p| p.1).sum::<f64>() / pixels.len().max(1) as f64,
        foreground_fraction: fraction,
    }
}
