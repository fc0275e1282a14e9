use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::ops::{self, Act, Padding};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePosition {
    BeforeNorm,
    AfterNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    Conv {
        stride: usize,
        padding: Padding,
    },
    Transpose {
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
}

/// One convolution followed by optional channel scaling, optional instance
/// normalization and an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit<T> {
    pub name: String,
    pub kind: UnitKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in, k, k]` for `Conv`, `[in, out, k, k]` for `Transpose`.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub norm: bool,
    pub act: Act,
    /// Offset of this unit's channels inside the generator's scale vector.
    pub scale_offset: Option<usize>,
    pub scale_position: ScalePosition,
}

#[derive(Debug, Clone)]
pub(crate) struct UnitCache<T> {
    conv_input: Tensor<T>,
    scale_input: Option<Tensor<T>>,
    scales: Vec<T>,
    normed: Option<(Tensor<T>, Vec<T>)>,
    out: Tensor<T>,
}

pub(crate) struct UnitGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    /// `[batch * out_channels]`, empty for unmodulated units.
    pub scales: Vec<T>,
}

/// Batch of per-item scale vectors, each of length `stride`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaleView<'a, T> {
    pub data: &'a [T],
    pub stride: usize,
}

pub(crate) struct UnitSpec {
    pub name: String,
    pub kind: UnitKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub bias: bool,
    pub norm: bool,
    pub act: Act,
}

pub(crate) const INIT_STD: f64 = 0.02;

impl<T: Element> ConvUnit<T> {
    pub(crate) fn new<R: Rng + ?Sized>(spec: UnitSpec, rng: &mut R) -> Self {
        let shape = match spec.kind {
            UnitKind::Conv { .. } => [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
            UnitKind::Transpose { .. } => {
                [spec.in_channels, spec.out_channels, spec.kernel, spec.kernel]
            }
        };
        ConvUnit {
            name: spec.name,
            kind: spec.kind,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            weight: Tensor::randn(&shape, INIT_STD, rng),
            bias: spec.bias.then(|| Tensor::zeros(&[spec.out_channels])),
            norm: spec.norm,
            act: spec.act,
            scale_offset: None,
            scale_position: ScalePosition::BeforeNorm,
        }
    }

    pub fn is_modulated(&self) -> bool {
        self.scale_offset.is_some()
    }

    fn scale_first(&self) -> bool {
        !self.norm || self.scale_position == ScalePosition::BeforeNorm
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match self.kind {
            UnitKind::Conv { stride, padding } => {
                let p = padding.amount();
                Some((
                    ops::conv_out_size(h, self.kernel, stride, p)?,
                    ops::conv_out_size(w, self.kernel, stride, p)?,
                ))
            }
            UnitKind::Transpose {
                stride,
                padding,
                output_padding,
            } => {
                let f = |s: usize| ((s - 1) * stride + self.kernel + output_padding).checked_sub(2 * padding);
                Some((f(h)?, f(w)?))
            }
        }
    }

    pub(crate) fn cast<U: Element>(&self) -> ConvUnit<U> {
        ConvUnit {
            name: self.name.clone(),
            kind: self.kind,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(|b| b.cast()),
            norm: self.norm,
            act: self.act,
            scale_offset: self.scale_offset,
            scale_position: self.scale_position,
        }
    }

    fn gather_scales(&self, view: ScaleView<'_, T>, batch: usize) -> Result<Vec<T>> {
        let off = self.scale_offset.expect("modulated unit");
        ensure!(
            view.data.len() == batch * view.stride,
            "scale batch has {} entries, expected {} x {}",
            view.data.len(),
            batch,
            view.stride
        );
        Ok((0..batch)
            .flat_map(|i| {
                let base = i * view.stride + off;
                view.data[base..base + self.out_channels].iter().copied()
            })
            .collect())
    }

    pub(crate) fn forward(
        &self,
        x: &Tensor<T>,
        scales: Option<ScaleView<'_, T>>,
    ) -> Result<(Tensor<T>, UnitCache<T>)> {
        let (n, c, _, _) = x.dims4()?;
        ensure!(
            c == self.in_channels,
            "{} expects {} channels, got {c}",
            self.name,
            self.in_channels
        );
        let (conv_input, mut cur) = match self.kind {
            UnitKind::Conv {
                stride,
                padding: Padding::Reflect(p),
            } => {
                let padded = ops::pad_reflect(x, p)?;
                let y = ops::conv2d(&padded, &self.weight, self.bias.as_ref(), stride, 0)?;
                (padded, y)
            }
            UnitKind::Conv {
                stride,
                padding: Padding::Zero(p),
            } => {
                let y = ops::conv2d(x, &self.weight, self.bias.as_ref(), stride, p)?;
                (x.clone(), y)
            }
            UnitKind::Transpose {
                stride,
                padding,
                output_padding,
            } => {
                let y = ops::conv_transpose2d(
                    x,
                    &self.weight,
                    self.bias.as_ref(),
                    stride,
                    padding,
                    output_padding,
                )?;
                (x.clone(), y)
            }
        };

        let used = match (self.scale_offset, scales) {
            (Some(_), Some(view)) => Some(self.gather_scales(view, n)?),
            _ => None,
        };
        let mut scale_input = None;
        if let (Some(s), true) = (&used, self.scale_first()) {
            let scaled = ops::scale_channels(&cur, s)?;
            scale_input = Some(std::mem::replace(&mut cur, scaled));
        }
        let mut normed = None;
        if self.norm {
            let (y, inv) = ops::instance_norm(&cur)?;
            normed = Some((y.clone(), inv));
            cur = y;
        }
        if let (Some(s), false) = (&used, self.scale_first()) {
            let scaled = ops::scale_channels(&cur, s)?;
            scale_input = Some(std::mem::replace(&mut cur, scaled));
        }
        let out = self.act.forward(&cur);
        let cache = UnitCache {
            conv_input,
            scale_input,
            scales: used.unwrap_or_default(),
            normed,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    pub(crate) fn backward(
        &self,
        cache: &UnitCache<T>,
        dy: &Tensor<T>,
        need_input: bool,
    ) -> Result<UnitGrads<T>> {
        let mut g = self.act.backward(dy, &cache.out);
        let mut d_scales = Vec::new();
        let scaled = cache.scale_input.as_ref();
        if let (Some(si), false) = (scaled, self.scale_first()) {
            let (gx, ds) = ops::scale_channels_backward(si, &cache.scales, &g)?;
            g = gx;
            d_scales = ds;
        }
        if let Some((y, inv)) = &cache.normed {
            g = ops::instance_norm_backward(&g, y, inv)?;
        }
        if let (Some(si), true) = (scaled, self.scale_first()) {
            let (gx, ds) = ops::scale_channels_backward(si, &cache.scales, &g)?;
            g = gx;
            d_scales = ds;
        }
        let (input, grads) = match self.kind {
            UnitKind::Conv { stride, padding } => {
                let p = match padding {
                    Padding::Zero(p) => p,
                    Padding::Reflect(_) => 0,
                };
                let gr = ops::conv2d_backward(&cache.conv_input, &self.weight, &g, stride, p, need_input)?;
                let input = match (gr.input.as_ref(), padding) {
                    (Some(d), Padding::Reflect(p)) => Some(ops::pad_reflect_backward(d, p)?),
                    _ => gr.input.clone(),
                };
                (input, gr)
            }
            UnitKind::Transpose {
                stride, padding, ..
            } => {
                let gr = ops::conv_transpose2d_backward(
                    &cache.conv_input,
                    &self.weight,
                    &g,
                    stride,
                    padding,
                    need_input,
                )?;
                (gr.input.clone(), gr)
            }
        };
        Ok(UnitGrads {
            input,
            weight: grads.weight,
            bias: self.bias.as_ref().map(|_| grads.bias),
            scales: d_scales,
        })
    }
}
