use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::Norm;
use super::unit::{ConvUnit, UnitCache, UnitKind, UnitSpec};
use super::LayerRow;
use crate::error::{ensure, Error, Result};
use crate::ops::{Act, Padding};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub n_layers: usize,
    pub norm: Norm,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_channels: 64,
            n_layers: 3,
            norm: Norm::Instance,
        }
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        DiscriminatorConfig {
            base_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_channels >= 1, "discriminator base_channels must be >= 1");
        ensure!(self.n_layers >= 1, "discriminator n_layers must be >= 1");
        Ok(())
    }
}

/// PatchGAN discriminator emitting raw (un-squashed) patch scores.
///
/// Every convolution is 4x4 with zero padding 1. The first `n_layers`
/// have stride 2, the last two stride 1, so an `H x W` input yields a
/// score map of `(H / 2^n_layers - 2) x (W / 2^n_layers - 2)` when `H` and
/// `W` are divisible by `2^n_layers`; a 64x64 image with three strided
/// layers gives a 6x6 map. Channel widths are `C·min(2^i, 8)`; the first
/// and last layers have bias and no normalization, the rest use instance
/// norm. All hidden activations are leaky ReLU with slope 0.2.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T = f32> {
    config: DiscriminatorConfig,
    units: Vec<ConvUnit<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace<T> {
    caches: Vec<UnitCache<T>>,
}

pub struct DiscriminatorGrads<T> {
    pub params: Option<Vec<Tensor<T>>>,
    pub input: Option<Tensor<T>>,
}

pub fn build_discriminator<T: Element, R: Rng + ?Sized>(
    config: &DiscriminatorConfig,
    rng: &mut R,
) -> Result<Discriminator<T>> {
    Discriminator::new(config, rng)
}

impl<T: Element> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let norm = config.norm == Norm::Instance;
        let c0 = config.base_channels;
        let lrelu = Act::LeakyRelu(0.2);
        let width = |i: usize| c0 * (1usize << i.min(3));
        let mut specs = vec![(3, c0, 2, true, false, lrelu)];
        for i in 1..config.n_layers {
            specs.push((width(i - 1), width(i), 2, !norm, norm, lrelu));
        }
        let n = config.n_layers;
        specs.push((width(n - 1), width(n), 1, !norm, norm, lrelu));
        specs.push((width(n), 1, 1, true, false, Act::Identity));
        let units = specs
            .into_iter()
            .enumerate()
            .map(|(i, (ci, co, stride, bias, norm, act))| {
                ConvUnit::new(
                    UnitSpec {
                        name: format!("d{i}"),
                        kind: UnitKind::Conv {
                            stride,
                            padding: Padding::Zero(1),
                        },
                        in_channels: ci,
                        out_channels: co,
                        kernel: 4,
                        bias,
                        norm,
                        act,
                    },
                    rng,
                )
            })
            .collect();
        Ok(Discriminator {
            config: config.clone(),
            units,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Spatial size of the score map for an `h x w` input, if every layer fits.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.units
            .iter()
            .try_fold((h, w), |(h, w), u| u.output_size(h, w).filter(|&(a, b)| a > 0 && b > 0))
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.units
            .iter()
            .flat_map(|u| std::iter::once(&u.weight).chain(u.bias.as_ref()))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.units
            .iter_mut()
            .flat_map(|u| std::iter::once(&mut u.weight).chain(u.bias.as_mut()))
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in &self.units {
            names.push(format!("discriminator.{}.weight", u.name));
            if u.bias.is_some() {
                names.push(format!("discriminator.{}.bias", u.name));
            }
        }
        names
    }

    pub fn cast<U: Element>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            units: self.units.iter().map(|u| u.cast()).collect(),
        }
    }

    pub fn layer_table(&self) -> Vec<LayerRow> {
        self.units.iter().map(LayerRow::from_unit).collect()
    }

    pub fn forward(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(img)?.0)
    }

    pub fn forward_traced(&self, img: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTrace<T>)> {
        let (_, c, h, w) = img.dims4()?;
        ensure!(c == 3, "discriminator expects 3 channels, got {c}");
        ensure!(
            self.output_size(h, w).is_some(),
            "{h}x{w} input is too small for a {}-layer discriminator",
            self.config.n_layers
        );
        let mut cur = img.clone();
        let mut caches = Vec::with_capacity(self.units.len());
        for u in &self.units {
            let (y, c) = u.forward(&cur, None)?;
            cur = y;
            caches.push(c);
        }
        Ok((cur, DiscriminatorTrace { caches }))
    }

    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<T>,
        d_scores: &Tensor<T>,
        need_params: bool,
        need_input: bool,
    ) -> Result<DiscriminatorGrads<T>> {
        if trace.caches.len() != self.units.len() {
            return Err(Error::invalid("trace does not belong to this discriminator"));
        }
        let mut g = d_scores.clone();
        let mut params = Vec::new();
        let mut input = None;
        for (i, (u, c)) in self.units.iter().zip(&trace.caches).enumerate().rev() {
            let want_input = i > 0 || need_input;
            let gr = u.backward(c, &g, want_input)?;
            if need_params {
                params.extend(gr.bias.into_iter());
                params.push(gr.weight);
            }
            match gr.input {
                Some(d) if i > 0 => g = d,
                Some(d) => input = Some(d),
                None => {}
            }
        }
        let params = need_params.then(|| {
            params.reverse();
            params
        });
        Ok(DiscriminatorGrads { params, input })
    }
}

pub fn discriminator_forward<T: Element>(d: &Discriminator<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    d.forward(img)
}
