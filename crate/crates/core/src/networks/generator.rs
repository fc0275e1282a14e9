use rand::Rng;
use serde::{Deserialize, Serialize};

use super::unit::{ConvUnit, ScalePosition, ScaleView, UnitCache, UnitKind, UnitSpec};
use super::LayerRow;
use crate::error::{ensure, Error, Result};
use crate::latent::FilterScales;
use crate::ops::{Act, Padding};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Instance,
    None,
}

/// Which convolutions receive a latent-derived scale per output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulatedLayers {
    All,
    /// Skip layers whose positive scales a following instance norm would
    /// cancel (instance norm with `before_norm` placement).
    AllButNormCancelled,
    OutputOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_res_blocks: usize,
    pub norm: Norm,
    pub modulated_layers: ModulatedLayers,
    pub scale_position: ScalePosition,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 64,
            n_downsample: 2,
            n_res_blocks: 9,
            norm: Norm::Instance,
            modulated_layers: ModulatedLayers::All,
            scale_position: ScalePosition::BeforeNorm,
        }
    }
}

impl GeneratorConfig {
    /// CPU-sized preset used for desk experiments on 64x64 images.
    pub fn desk() -> Self {
        GeneratorConfig {
            base_channels: 16,
            n_downsample: 1,
            n_res_blocks: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_channels >= 1, "base_channels must be >= 1");
        ensure!(self.n_res_blocks >= 1, "n_res_blocks must be >= 1");
        ensure!(self.n_downsample <= 6, "n_downsample must be <= 6");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Stage<T> {
    Unit(ConvUnit<T>),
    Residual(ConvUnit<T>, ConvUnit<T>),
}

/// CycleGAN-style ResNet generator with latent-scaled convolutions.
///
/// Layer table (`C` = base_channels, `d` = n_downsample, `R` = n_res_blocks):
///
/// | stage        | op                                   | channels                | norm | act  |
/// |--------------|--------------------------------------|-------------------------|------|------|
/// | stem         | reflect-pad 3, conv 7x7              | 3 -> C                  | IN   | ReLU |
/// | down i < d   | conv 3x3 stride 2, zero-pad 1        | C·2^i -> C·2^(i+1)      | IN   | ReLU |
/// | res r < R    | reflect-pad 1, conv 3x3 (x2), skip   | C·2^d -> C·2^d (x2)     | IN   | ReLU, none |
/// | up i < d     | transposed conv 3x3 stride 2, pad 1, out-pad 1 | C·2^(d-i) -> C·2^(d-i-1) | IN | ReLU |
/// | out          | reflect-pad 3, conv 7x7              | C -> 3                  | none | tanh |
///
/// Convolutions followed by instance norm carry no bias. With every layer
/// modulated, `S = C + Σ_i C·2^(i+1) + 2R·C·2^d + Σ_i C·2^(d-i-1) + 3`,
/// which is 5251 for the full-size (64, 2, 9) network.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T = f32> {
    config: GeneratorConfig,
    stages: Vec<Stage<T>>,
    modulated_channels: usize,
}

#[derive(Debug, Clone)]
enum StageCache<T> {
    Unit(UnitCache<T>),
    Residual(UnitCache<T>, UnitCache<T>),
}

#[derive(Debug, Clone)]
pub struct GeneratorTrace<T> {
    stages: Vec<StageCache<T>>,
    batch: usize,
}

pub struct GeneratorGrads<T> {
    /// Same order as [`Generator::parameters`].
    pub params: Vec<Tensor<T>>,
    /// One gradient vector of length `S` per batch item.
    pub scales: Vec<Vec<T>>,
}

pub fn build_generator<T: Element, R: Rng + ?Sized>(
    config: &GeneratorConfig,
    rng: &mut R,
) -> Result<Generator<T>> {
    Generator::new(config, rng)
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let norm = config.norm == Norm::Instance;
        let bias = !norm;
        let c0 = config.base_channels;
        let d = config.n_downsample;
        let mut stages = Vec::new();
        let unit = |name: String, kind, ci, co, k, bias, norm, act, rng: &mut R| {
            ConvUnit::new(
                UnitSpec {
                    name,
                    kind,
                    in_channels: ci,
                    out_channels: co,
                    kernel: k,
                    bias,
                    norm,
                    act,
                },
                rng,
            )
        };
        stages.push(Stage::Unit(unit(
            "stem".into(),
            UnitKind::Conv {
                stride: 1,
                padding: Padding::Reflect(3),
            },
            3,
            c0,
            7,
            bias,
            norm,
            Act::Relu,
            rng,
        )));
        for i in 0..d {
            stages.push(Stage::Unit(unit(
                format!("down{i}"),
                UnitKind::Conv {
                    stride: 2,
                    padding: Padding::Zero(1),
                },
                c0 << i,
                c0 << (i + 1),
                3,
                bias,
                norm,
                Act::Relu,
                rng,
            )));
        }
        let width = c0 << d;
        for r in 0..config.n_res_blocks {
            let kind = UnitKind::Conv {
                stride: 1,
                padding: Padding::Reflect(1),
            };
            let a = unit(format!("res{r}.a"), kind, width, width, 3, bias, norm, Act::Relu, rng);
            let b = unit(
                format!("res{r}.b"),
                kind,
                width,
                width,
                3,
                bias,
                norm,
                Act::Identity,
                rng,
            );
            stages.push(Stage::Residual(a, b));
        }
        for i in 0..d {
            stages.push(Stage::Unit(unit(
                format!("up{i}"),
                UnitKind::Transpose {
                    stride: 2,
                    padding: 1,
                    output_padding: 1,
                },
                c0 << (d - i),
                c0 << (d - i - 1),
                3,
                bias,
                norm,
                Act::Relu,
                rng,
            )));
        }
        stages.push(Stage::Unit(unit(
            "out".into(),
            UnitKind::Conv {
                stride: 1,
                padding: Padding::Reflect(3),
            },
            c0,
            3,
            7,
            true,
            false,
            Act::Tanh,
            rng,
        )));

        let mut gen = Generator {
            config: config.clone(),
            stages,
            modulated_channels: 0,
        };
        let n_units = gen.units().count();
        let mut offset = 0;
        for (idx, u) in gen.units_mut().enumerate() {
            u.scale_position = config.scale_position;
            let is_output = idx + 1 == n_units;
            let cancelled = u.norm && config.scale_position == ScalePosition::BeforeNorm;
            let modulated = match config.modulated_layers {
                ModulatedLayers::All => true,
                ModulatedLayers::AllButNormCancelled => !cancelled,
                ModulatedLayers::OutputOnly => is_output,
            };
            if modulated {
                u.scale_offset = Some(offset);
                offset += u.out_channels;
            }
        }
        gen.modulated_channels = offset;
        Ok(gen)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Number of scales `S` consumed per image, summed over modulated layers.
    pub fn modulated_channel_count(&self) -> usize {
        self.modulated_channels
    }

    pub fn units(&self) -> impl Iterator<Item = &ConvUnit<T>> {
        self.stages.iter().flat_map(|s| match s {
            Stage::Unit(u) => vec![u],
            Stage::Residual(a, b) => vec![a, b],
        })
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut ConvUnit<T>> {
        self.stages.iter_mut().flat_map(|s| match s {
            Stage::Unit(u) => vec![u],
            Stage::Residual(a, b) => vec![a, b],
        })
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.units()
            .flat_map(|u| std::iter::once(&u.weight).chain(u.bias.as_ref()))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.units_mut()
            .flat_map(|u| std::iter::once(&mut u.weight).chain(u.bias.as_mut()))
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in self.units() {
            names.push(format!("generator.{}.weight", u.name));
            if u.bias.is_some() {
                names.push(format!("generator.{}.bias", u.name));
            }
        }
        names
    }

    pub fn cast<U: Element>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| match s {
                    Stage::Unit(u) => Stage::Unit(u.cast()),
                    Stage::Residual(a, b) => Stage::Residual(a.cast(), b.cast()),
                })
                .collect(),
            modulated_channels: self.modulated_channels,
        }
    }

    pub fn layer_table(&self) -> Vec<LayerRow> {
        self.units().map(LayerRow::from_unit).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let (n, c, h, w) = x.dims4()?;
        ensure!(c == 3, "generator expects 3 input channels, got {c}");
        let m = 1usize << self.config.n_downsample;
        ensure!(
            h % m == 0 && w % m == 0,
            "input {h}x{w} must be divisible by {m}"
        );
        ensure!(h > 3 && w > 3, "input {h}x{w} too small for 7x7 reflection padding");
        Ok(n)
    }

    fn flatten_scales(&self, scales: &[FilterScales<T>], batch: usize) -> Result<Vec<T>> {
        ensure!(
            scales.len() == batch || scales.len() == 1,
            "got {} scale vectors for a batch of {batch}",
            scales.len()
        );
        let s = self.modulated_channels;
        for v in scales {
            ensure!(
                v.len() == s,
                "scale vector has length {}, generator modulates {s} channels",
                v.len()
            );
        }
        Ok((0..batch)
            .flat_map(|i| scales[i.min(scales.len() - 1)].values().iter().copied())
            .collect())
    }

    /// Translate `x` with one scale vector per batch item (or one shared by all).
    pub fn forward(&self, x: &Tensor<T>, scales: &[FilterScales<T>]) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x, Some(scales))?.0)
    }

    /// The generator with every scale removed.
    pub fn forward_plain(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x, None)?.0)
    }

    pub fn forward_traced(
        &self,
        x: &Tensor<T>,
        scales: Option<&[FilterScales<T>]>,
    ) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        let batch = self.check_input(x)?;
        let flat = scales.map(|s| self.flatten_scales(s, batch)).transpose()?;
        let view = flat.as_deref().map(|data| ScaleView {
            data,
            stride: self.modulated_channels,
        });
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                Stage::Unit(u) => {
                    let (y, c) = u.forward(&cur, view)?;
                    cur = y;
                    caches.push(StageCache::Unit(c));
                }
                Stage::Residual(a, b) => {
                    let (h, ca) = a.forward(&cur, view)?;
                    let (mut y, cb) = b.forward(&h, view)?;
                    y.add_assign(&cur);
                    cur = y;
                    caches.push(StageCache::Residual(ca, cb));
                }
            }
        }
        Ok((
            cur,
            GeneratorTrace {
                stages: caches,
                batch,
            },
        ))
    }

    /// Back-propagate `d loss / d output` to parameter and scale gradients.
    pub fn backward(&self, trace: &GeneratorTrace<T>, d_out: &Tensor<T>) -> Result<GeneratorGrads<T>> {
        if trace.stages.len() != self.stages.len() {
            return Err(Error::invalid("trace does not belong to this generator"));
        }
        let s = self.modulated_channels;
        let mut d_scales = vec![T::zero(); trace.batch * s];
        let mut per_unit: Vec<(Tensor<T>, Option<Tensor<T>>)> = Vec::new();
        let mut g = d_out.clone();
        let mut record = |u: &ConvUnit<T>, ds: &[T], w: Tensor<T>, b: Option<Tensor<T>>| {
            if let Some(off) = u.scale_offset {
                for i in 0..trace.batch {
                    for j in 0..u.out_channels {
                        d_scales[i * s + off + j] += ds[i * u.out_channels + j];
                    }
                }
            }
            per_unit.push((w, b));
        };
        for (idx, (stage, cache)) in self.stages.iter().zip(&trace.stages).enumerate().rev() {
            let first = idx == 0;
            match (stage, cache) {
                (Stage::Unit(u), StageCache::Unit(c)) => {
                    let gr = u.backward(c, &g, !first)?;
                    record(u, &gr.scales, gr.weight, gr.bias);
                    if let Some(d) = gr.input {
                        g = d;
                    }
                }
                (Stage::Residual(a, b), StageCache::Residual(ca, cb)) => {
                    let gb = b.backward(cb, &g, true)?;
                    let ga = a.backward(ca, gb.input.as_ref().unwrap(), true)?;
                    g.add_assign(ga.input.as_ref().unwrap());
                    record(b, &gb.scales, gb.weight, gb.bias);
                    record(a, &ga.scales, ga.weight, ga.bias);
                }
                _ => return Err(Error::invalid("trace does not belong to this generator")),
            }
        }
        per_unit.reverse();
        let params = per_unit
            .into_iter()
            .flat_map(|(w, b)| std::iter::once(w).chain(b))
            .collect();
        Ok(GeneratorGrads {
            params,
            scales: d_scales.chunks(s.max(1)).map(|c| c.to_vec()).take(trace.batch).collect(),
        })
    }
}

/// Free-function form of [`Generator::forward`] for a single shared scale vector.
pub fn generator_forward<T: Element>(
    g: &Generator<T>,
    x: &Tensor<T>,
    scales: &FilterScales<T>,
) -> Result<Tensor<T>> {
    g.forward(x, std::slice::from_ref(scales))
}
