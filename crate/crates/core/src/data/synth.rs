//! Deterministic two-domain shapes dataset.
//!
//! Domain A holds white outline drawings of a circle, square or triangle on
//! black. Domain B holds filled shapes whose style is a hue in `[0, 1)` and
//! a fill pattern (solid or striped). Each image is a pure function of the
//! spec and its index; the two domains use independent random streams, so
//! `trainA/i` and `trainB/i` are unrelated.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_unpaired, Augment, UnpairedDataset};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Solid,
    Striped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthShapesSpec {
    /// Images per domain.
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub shapes: Vec<Shape>,
    /// 4x4 supersampling of shape coverage.
    pub anti_alias: bool,
}

impl SynthShapesSpec {
    pub fn new(count: usize, image_size: usize, seed: u64) -> Self {
        SynthShapesSpec {
            count,
            image_size,
            seed,
            shapes: vec![Shape::Circle, Shape::Square, Shape::Triangle],
            anti_alias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.count >= 1, "synthetic count must be >= 1");
        ensure!(self.image_size >= 8, "synthetic image size must be >= 8");
        ensure!(!self.shapes.is_empty(), "synthetic shape set is empty");
        Ok(())
    }
}

/// Geometry and style drawn for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub shape: Shape,
    pub center: (f64, f64),
    pub radius: f64,
    pub rotation: f64,
    pub hue: f64,
    pub pattern: Pattern,
    pub stripe_period: f64,
}

const DOMAIN_A: u64 = 0xA;
const DOMAIN_B: u64 = 0xB;

fn stream_rng(seed: u64, domain: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain << 32 | index as u64);
    rng
}

impl SynthShapesSpec {
    fn params(&self, domain: u64, index: usize) -> ShapeParams {
        let mut rng = stream_rng(self.seed, domain, index);
        let s = self.image_size as f64;
        let shape = self.shapes[rng.random_range(0..self.shapes.len())];
        let radius = rng.random_range(0.22..0.34) * s;
        let margin = radius + 2.0;
        let center = (
            rng.random_range(margin..s - margin),
            rng.random_range(margin..s - margin),
        );
        ShapeParams {
            shape,
            center,
            radius,
            rotation: rng.random_range(0.0..std::f64::consts::TAU),
            hue: rng.random_range(0.0..1.0),
            pattern: if rng.random_bool(0.5) {
                Pattern::Solid
            } else {
                Pattern::Striped
            },
            stripe_period: rng.random_range(0.12..0.2) * s,
        }
    }

    pub fn params_a(&self, index: usize) -> ShapeParams {
        self.params(DOMAIN_A, index)
    }

    pub fn params_b(&self, index: usize) -> ShapeParams {
        self.params(DOMAIN_B, index)
    }

    pub fn render_a(&self, index: usize) -> RgbImage {
        let p = self.params_a(index);
        let half_width = (self.image_size as f64 / 40.0).max(0.75);
        self.rasterize(|x, y| {
            let d = signed_distance(&p, x, y);
            (d.abs() <= half_width).then_some([255, 255, 255])
        })
    }

    pub fn render_b(&self, index: usize) -> RgbImage {
        let p = self.params_b(index);
        let bright = hsv_to_rgb(p.hue, 0.85, 0.95);
        let dark = hsv_to_rgb(p.hue, 0.85, 0.5);
        self.rasterize(|x, y| {
            if signed_distance(&p, x, y) > 0.0 {
                return None;
            }
            let color = match p.pattern {
                Pattern::Solid => bright,
                Pattern::Striped => {
                    let (c, s) = (p.rotation.cos(), p.rotation.sin());
                    let u = (x - p.center.0) * c + (y - p.center.1) * s;
                    if (u / p.stripe_period).floor() as i64 % 2 == 0 {
                        bright
                    } else {
                        dark
                    }
                }
            };
            Some(color)
        })
    }

    fn rasterize(&self, paint: impl Fn(f64, f64) -> Option<[u8; 3]>) -> RgbImage {
        let n = self.image_size as u32;
        let sub = if self.anti_alias { 4 } else { 1 };
        RgbImage::from_fn(n, n, |px, py| {
            let mut acc = [0u32; 3];
            for sy in 0..sub {
                for sx in 0..sub {
                    let x = px as f64 + (sx as f64 + 0.5) / sub as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / sub as f64;
                    if let Some(c) = paint(x, y) {
                        for k in 0..3 {
                            acc[k] += c[k] as u32;
                        }
                    }
                }
            }
            let cnt = sub * sub;
            Rgb([
                ((acc[0] + cnt / 2) / cnt) as u8,
                ((acc[1] + cnt / 2) / cnt) as u8,
                ((acc[2] + cnt / 2) / cnt) as u8,
            ])
        })
    }
}

/// Negative inside, positive outside; exact for circles, the max of edge
/// half-plane distances for polygons.
fn signed_distance(p: &ShapeParams, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - p.center.0, y - p.center.1);
    match p.shape {
        Shape::Circle => (dx * dx + dy * dy).sqrt() - p.radius,
        Shape::Square | Shape::Triangle => {
            let sides = if p.shape == Shape::Square { 4 } else { 3 };
            // Apothem so the circumradius equals `radius`.
            let apothem = p.radius * (std::f64::consts::PI / sides as f64).cos();
            (0..sides)
                .map(|i| {
                    let a = p.rotation + i as f64 * std::f64::consts::TAU / sides as f64;
                    dx * a.cos() + dy * a.sin() - apothem
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let q8 = |c: f64| (c * 255.0).round() as u8;
    [q8(r), q8(g), q8(b)]
}

/// Write `trainA/*.png` and `trainB/*.png` under `out`, then load them back.
pub fn generate_synth_shapes(spec: &SynthShapesSpec, out: &Path) -> Result<UnpairedDataset> {
    spec.validate()?;
    for (dir, domain) in [("trainA", DOMAIN_A), ("trainB", DOMAIN_B)] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for i in 0..spec.count {
            let img = if domain == DOMAIN_A {
                spec.render_a(i)
            } else {
                spec.render_b(i)
            };
            let path = d.join(format!("{i:05}.png"));
            img.save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
    }
    load_unpaired(out, spec.image_size, Augment::default())
}

/// In-memory variant of [`generate_synth_shapes`].
pub fn synth_dataset(spec: &SynthShapesSpec) -> Result<UnpairedDataset> {
    spec.validate()?;
    let a = (0..spec.count)
        .map(|i| super::image_io::rgb_to_tensor(&spec.render_a(i)))
        .collect();
    let b = (0..spec.count)
        .map(|i| super::image_io::rgb_to_tensor(&spec.render_b(i)))
        .collect();
    UnpairedDataset::from_tensors(a, b, spec.image_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn edge_images_are_binary_without_anti_aliasing() {
        let spec = SynthShapesSpec::new(16, 64, 7);
        for i in 0..16 {
            let img = spec.render_a(i);
            let values: BTreeSet<[u8; 3]> = img.pixels().map(|p| p.0).collect();
            assert_eq!(values.len(), 2, "image {i} has {values:?}");
        }
    }

    #[test]
    fn anti_aliasing_adds_intermediate_levels() {
        let mut spec = SynthShapesSpec::new(1, 32, 7);
        spec.anti_alias = true;
        let values: BTreeSet<[u8; 3]> = spec.render_a(0).pixels().map(|p| p.0).collect();
        assert!(values.len() > 2);
    }

    #[test]
    fn rendering_is_a_pure_function_of_index() {
        let spec = SynthShapesSpec::new(4, 32, 3);
        assert_eq!(spec.render_b(2), spec.render_b(2));
        assert_ne!(spec.params_a(1), spec.params_b(1));
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(2.0 / 3.0, 1.0, 1.0), [0, 0, 255]);
    }
}
