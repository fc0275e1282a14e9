//! Diversity, style consistency and the variability/quality tradeoff.
//!
//! Every evaluation reads the model through a [`Translator`] and draws its
//! codes from a caller-owned rng, so reports are pure functions of model,
//! data and seed.

mod distance;
mod grid;
pub mod style;

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::data::{Domain, UnpairedDataset};
use crate::error::{ensure, Result};
use crate::latent::{interpolate_codes, sample_latent, FilterScales, LatentCode, Mapper, MapperConfig};
use crate::networks::Generator;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainState};

pub use distance::{DistanceBackend, ImageDistance, PerceptualPlugin, PixelL1};
pub use grid::{render_grid, save_grid};
pub use style::{image_style, ImageStyle};

/// Default number of pairs in a desk-scale diversity measurement.
pub const DEFAULT_N_PAIRS: usize = 190;

/// Read-only view of a generator and its mapper. With `frozen` set the
/// mapper is bypassed and every scale is 1.
#[derive(Debug, Clone, Copy)]
pub struct Translator<'a> {
    pub generator: &'a Generator<f32>,
    pub mapper: &'a Mapper<f32>,
    pub frozen: bool,
}

impl<'a> Translator<'a> {
    pub fn new(generator: &'a Generator<f32>, mapper: &'a Mapper<f32>) -> Self {
        Translator {
            generator,
            mapper,
            frozen: false,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.mapper.config().k
    }

    pub fn scales(&self, z: &LatentCode<f32>) -> Result<FilterScales<f32>> {
        ensure!(
            z.dim() == self.code_dim(),
            "code has length {}, model expects {}",
            z.dim(),
            self.code_dim()
        );
        if self.frozen {
            Ok(FilterScales::ones(self.generator.modulated_channel_count()))
        } else {
            self.mapper.map(z)
        }
    }

    /// Translate one image under several codes in a single batched pass.
    /// Returns `[1, 3, h, w]` outputs in code order.
    pub fn translate_codes(&self, x: &Tensor<f32>, codes: &[LatentCode<f32>]) -> Result<Vec<Tensor<f32>>> {
        let x = as_batch(x)?;
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let scales = codes.iter().map(|z| self.scales(z)).collect::<Result<Vec<_>>>()?;
        let batch = Tensor::stack(&vec![&x; codes.len()])?;
        let out = self.generator.forward(&batch, &scales)?;
        Ok((0..codes.len()).map(|i| out.slice_items(i, 1)).collect())
    }

    pub fn translate(&self, x: &Tensor<f32>, z: &LatentCode<f32>) -> Result<Tensor<f32>> {
        Ok(self.translate_codes(x, std::slice::from_ref(z))?.remove(0))
    }
}

impl TrainState {
    pub fn translator(&self) -> Translator<'_> {
        Translator {
            generator: &self.generator,
            mapper: &self.mapper,
            frozen: self.config.freeze_scales_to_one,
        }
    }
}

fn as_batch(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    match x.shape() {
        [3, h, w] => x.clone().reshape(&[1, 3, *h, *w]),
        [1, 3, _, _] => Ok(x.clone()),
        s => Err(crate::error::Error::invalid(format!(
            "expected one [3, h, w] image, got shape {s:?}"
        ))),
    }
}

fn distinct_codes<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Result<Vec<LatentCode<f32>>> {
    let mut codes: Vec<LatentCode<f32>> = Vec::with_capacity(n);
    while codes.len() < n {
        let z = sample_latent(k, rng)?;
        if codes.last() != Some(&z) {
            codes.push(z);
        }
    }
    Ok(codes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub n_pairs: usize,
    pub distance_backend: DistanceBackend,
    pub mean_distance: f64,
    pub std_distance: f64,
}

impl DiversityReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "n_pairs={}\ndistance_backend={}\nmean_distance={:.9}\nstd_distance={:.9}\n",
            self.n_pairs, self.distance_backend, self.mean_distance, self.std_distance
        )
    }
}

/// Mean distance between outputs for different codes on the same input.
///
/// Inputs are visited in order (cycling as needed). Each visit draws
/// `n_codes_per_image` codes and compares consecutive outputs, giving
/// `n_codes_per_image - 1` pairs per visit, until `n_pairs` are collected.
pub fn diversity_score<R: Rng + ?Sized>(
    model: Translator<'_>,
    images: &[Tensor<f32>],
    n_codes_per_image: usize,
    n_pairs: usize,
    backend: &dyn ImageDistance,
    rng: &mut R,
) -> Result<DiversityReport> {
    ensure!(!images.is_empty(), "diversity needs at least one input image");
    ensure!(n_pairs >= 1, "n_pairs must be >= 1");
    ensure!(n_codes_per_image >= 2, "n_codes_per_image must be >= 2");
    let mut distances = Vec::with_capacity(n_pairs);
    let mut next = 0;
    while distances.len() < n_pairs {
        let x = &images[next % images.len()];
        next += 1;
        let want = (n_pairs - distances.len() + 1).min(n_codes_per_image);
        let codes = distinct_codes(model.code_dim(), want, rng)?;
        let outs = model.translate_codes(x, &codes)?;
        for w in outs.windows(2) {
            distances.push(backend.distance(&w[0], &w[1])?);
        }
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(DiversityReport {
        n_pairs: distances.len(),
        distance_backend: backend.backend(),
        mean_distance: mean,
        std_distance: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStyle {
    /// Circular mean over images of each output's mean hue.
    pub mean_hue: f64,
    pub mean_saturation: f64,
}

/// Hue statistics are circular (hue lives on `[0, 1)` with wrap-around).
///
/// `within_code_std` averages, over codes, the spread across input images;
/// `across_code_std` averages, over images, the spread across codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_code: Vec<CodeStyle>,
    pub within_code_std: f64,
    pub across_code_std: f64,
    pub within_code_saturation_std: f64,
    pub across_code_saturation_std: f64,
}

impl ConsistencyReport {
    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "n_codes={}\nwithin_code_std={:.9}\nacross_code_std={:.9}\nwithin_code_saturation_std={:.9}\nacross_code_saturation_std={:.9}\n",
            self.per_code.len(),
            self.within_code_std,
            self.across_code_std,
            self.within_code_saturation_std,
            self.across_code_saturation_std
        );
        for (i, c) in self.per_code.iter().enumerate() {
            s += &format!("code.{i}.mean_hue={:.6}\ncode.{i}.mean_saturation={:.6}\n", c.mean_hue, c.mean_saturation);
        }
        s
    }
}

/// Output style for every (code, image) pair, as `styles[code][image]`.
pub fn style_table(model: Translator<'_>, images: &[Tensor<f32>], codes: &[LatentCode<f32>]) -> Result<Vec<Vec<ImageStyle>>> {
    let mut table = vec![Vec::with_capacity(images.len()); codes.len()];
    for x in images {
        for (c, out) in model.translate_codes(x, codes)?.iter().enumerate() {
            table[c].push(image_style(out));
        }
    }
    Ok(table)
}

pub fn style_consistency(
    model: Translator<'_>,
    images: &[Tensor<f32>],
    codes: &[LatentCode<f32>],
) -> Result<ConsistencyReport> {
    ensure!(!images.is_empty(), "style consistency needs at least one input image");
    ensure!(!codes.is_empty(), "style consistency needs at least one code");
    let table = style_table(model, images, codes)?;
    let hue = |s: &ImageStyle| s.mean_hue;
    let sat = |s: &ImageStyle| s.mean_saturation;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;

    let within = |f: &dyn Fn(&ImageStyle) -> f64, circ: bool| {
        mean(table
            .iter()
            .map(|row| spread(&row.iter().map(f).collect::<Vec<_>>(), circ))
            .collect())
    };
    let across = |f: &dyn Fn(&ImageStyle) -> f64, circ: bool| {
        mean((0..images.len())
            .map(|i| spread(&table.iter().map(|row| f(&row[i])).collect::<Vec<_>>(), circ))
            .collect())
    };
    Ok(ConsistencyReport {
        per_code: table
            .iter()
            .map(|row| CodeStyle {
                mean_hue: style::circular_mean(&row.iter().map(hue).collect::<Vec<_>>()),
                mean_saturation: mean(row.iter().map(sat).collect()),
            })
            .collect(),
        within_code_std: within(&hue, true),
        across_code_std: across(&hue, true),
        within_code_saturation_std: within(&sat, false),
        across_code_saturation_std: across(&sat, false),
    })
}

fn spread(xs: &[f64], circular: bool) -> f64 {
    if circular {
        style::circular_std(xs)
    } else {
        style::std_dev(xs)
    }
}

/// `G(x, lerp(z1, z2, t))` for `steps` evenly spaced `t` in `[0, 1]`.
/// The endpoints use `z1` and `z2` unchanged.
pub fn interpolation_grid(
    model: Translator<'_>,
    x: &Tensor<f32>,
    z1: &LatentCode<f32>,
    z2: &LatentCode<f32>,
    steps: usize,
) -> Result<Vec<Tensor<f32>>> {
    ensure!(steps >= 2, "interpolation needs at least 2 steps, got {steps}");
    let codes = (0..steps)
        .map(|i| match i {
            0 => Ok(z1.clone()),
            i if i == steps - 1 => Ok(z2.clone()),
            i => interpolate_codes(z1, z2, i as f64 / (steps - 1) as f64),
        })
        .collect::<Result<Vec<_>>>()?;
    model.translate_codes(x, &codes)
}

/// Coarse RGB histogram support of a set of images: the bins of an 8×8×8
/// quantization of `[0, 255]` that any pixel falls into.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGamut {
    occupied: Vec<bool>,
}

const GAMUT_BINS: usize = 8;

fn gamut_bin(r: f32, g: f32, b: f32) -> usize {
    let q = |v: f32| {
        let u = crate::data::image_io::quantize(v) as usize;
        u * GAMUT_BINS / 256
    };
    (q(r) * GAMUT_BINS + q(g)) * GAMUT_BINS + q(b)
}

fn pixels(img: &Tensor<f32>) -> impl Iterator<Item = (f32, f32, f32)> + '_ {
    let plane = img.len() / 3;
    let d = img.data();
    (0..plane).map(move |i| (d[i], d[plane + i], d[2 * plane + i]))
}

impl ColorGamut {
    pub fn from_images(images: &[Tensor<f32>]) -> Self {
        let mut occupied = vec![false; GAMUT_BINS.pow(3)];
        for img in images {
            for (r, g, b) in pixels(img) {
                occupied[gamut_bin(r, g, b)] = true;
            }
        }
        ColorGamut { occupied }
    }

    /// Fraction of pixels whose bin is occupied.
    pub fn coverage(&self, img: &Tensor<f32>) -> f64 {
        let total = img.len() / 3;
        let inside = pixels(img).filter(|&(r, g, b)| self.occupied[gamut_bin(r, g, b)]).count();
        inside as f64 / total.max(1) as f64
    }
}

/// Budget shared by every configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepBudget {
    pub base: TrainConfig,
    pub steps: u64,
    pub eval_images: usize,
    pub n_codes_per_image: usize,
    pub n_pairs: usize,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub config: MapperConfig,
    pub diversity: DiversityReport,
    /// Mean fraction of output pixels inside the B-domain color gamut.
    /// A coarse, discriminator-free stand-in for image quality.
    pub quality_proxy: f64,
}

/// Train a fresh model per mapper configuration under the same budget and
/// seed, then measure pixel-L1 diversity and the gamut quality proxy.
pub fn tradeoff_sweep(
    configs: &[MapperConfig],
    budget: &SweepBudget,
    dataset: &UnpairedDataset,
) -> Result<Vec<TradeoffRow>> {
    use rand::SeedableRng;

    let gamut = ColorGamut::from_images(dataset.images(Domain::B));
    let n_eval = budget.eval_images.min(dataset.len_a()).max(1);
    let inputs: Vec<Tensor<f32>> = (0..n_eval).map(|i| dataset.get(Domain::A, i)).collect();
    let mut rows = Vec::with_capacity(configs.len());
    for mapper in configs {
        let mut state = TrainState::new(TrainConfig {
            mapper: mapper.clone(),
            ..budget.base.clone()
        })?;
        state.fit(dataset, budget.steps, |_, _| Ok(()))?;
        let model = state.translator();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(budget.eval_seed);
        let diversity = diversity_score(
            model,
            &inputs,
            budget.n_codes_per_image,
            budget.n_pairs,
            &PixelL1,
            &mut rng,
        )?;
        let mut coverage = Vec::new();
        for x in &inputs {
            let z = sample_latent(mapper.k, &mut rng)?;
            coverage.push(gamut.coverage(&model.translate(x, &z)?));
        }
        rows.push(TradeoffRow {
            config: mapper.clone(),
            diversity,
            quality_proxy: coverage.iter().sum::<f64>() / coverage.len() as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::GeneratorConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (Generator<f32>, Mapper<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(
            &GeneratorConfig {
                base_channels: 4,
                n_downsample: 1,
                n_res_blocks: 1,
                ..GeneratorConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let cfg = MapperConfig {
            hidden_sizes: vec![8],
            ..MapperConfig::default()
        };
        let m = crate::latent::init_mapper(&cfg, g.modulated_channel_count(), &mut rng).unwrap();
        (g, m)
    }

    fn inputs(n: usize) -> Vec<Tensor<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n).map(|_| Tensor::uniform(&[3, 8, 8], -1.0, 1.0, &mut rng)).collect()
    }

    #[test]
    fn frozen_model_has_zero_diversity() {
        let (g, m) = tiny();
        let mut model = Translator::new(&g, &m);
        model.frozen = true;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = diversity_score(model, &inputs(3), 4, 10, &PixelL1, &mut rng).unwrap();
        assert_eq!(r.n_pairs, 10);
        assert_eq!(r.mean_distance, 0.0);
    }

    #[test]
    fn diversity_is_seeded() {
        let (g, m) = tiny();
        let model = Translator::new(&g, &m);
        let run = |seed| {
            diversity_score(model, &inputs(2), 3, 7, &PixelL1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert!(run(5).mean_distance > 0.0);
    }

    #[test]
    fn empty_image_set_is_rejected() {
        let (g, m) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(diversity_score(Translator::new(&g, &m), &[], 2, 1, &PixelL1, &mut rng).is_err());
    }

    #[test]
    fn single_sample_consistency_is_zero() {
        let (g, m) = tiny();
        let z = sample_latent(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r = style_consistency(Translator::new(&g, &m), &inputs(1), &[z]).unwrap();
        assert_eq!(r.within_code_std, 0.0);
        assert_eq!(r.across_code_std, 0.0);
    }

    #[test]
    fn interpolation_endpoints_match_direct_generation() {
        let (g, m) = tiny();
        let model = Translator::new(&g, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (z1, z2) = (sample_latent(8, &mut rng).unwrap(), sample_latent(8, &mut rng).unwrap());
        let x = &inputs(1)[0];
        let frames = interpolation_grid(model, x, &z1, &z2, 5).unwrap();
        assert_eq!(frames.len(), 5);
        assert_eq!(frames[0], model.translate(x, &z1).unwrap());
        assert_eq!(frames[4], model.translate(x, &z2).unwrap());
        assert!(interpolation_grid(model, x, &z1, &z2, 1).is_err());
    }

    #[test]
    fn gamut_contains_its_own_pixels() {
        let imgs = inputs(2);
        let gamut = ColorGamut::from_images(&imgs);
        assert_eq!(gamut.coverage(&imgs[0]), 1.0);
        let black = ColorGamut::from_images(&[Tensor::full(&[3, 2, 2], -1.0)]);
        assert_eq!(black.coverage(&Tensor::full(&[3, 2, 2], 1.0)), 0.0);
    }
}
