//! Generator and discriminator networks.
//!
//! The generator follows the CycleGAN ResNet recipe with one difference:
//! every modulated convolution multiplies its output channels by scales
//! produced from a latent code. The discriminator is a plain PatchGAN.

mod discriminator;
mod generator;
mod unit;

pub use discriminator::{
    build_discriminator, discriminator_forward, Discriminator, DiscriminatorConfig,
    DiscriminatorGrads, DiscriminatorTrace,
};
pub use generator::{
    build_generator, generator_forward, Generator, GeneratorConfig, GeneratorGrads,
    GeneratorTrace, ModulatedLayers, Norm,
};
pub use unit::{ConvUnit, ScalePosition, UnitKind};

use crate::tensor::Element;

/// One row of a printable architecture summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub op: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub norm: bool,
    pub activation: String,
    pub scale_offset: Option<usize>,
}

impl LayerRow {
    fn from_unit<T: Element>(u: &ConvUnit<T>) -> Self {
        let op = match u.kind {
            UnitKind::Conv { stride, padding } => {
                let pad = match padding {
                    crate::ops::Padding::Zero(p) => format!("zero{p}"),
                    crate::ops::Padding::Reflect(p) => format!("reflect{p}"),
                };
                format!("conv s{stride} {pad}")
            }
            UnitKind::Transpose { stride, .. } => format!("convT s{stride}"),
        };
        LayerRow {
            name: u.name.clone(),
            op,
            in_channels: u.in_channels,
            out_channels: u.out_channels,
            kernel: u.kernel,
            norm: u.norm,
            activation: match u.act {
                crate::ops::Act::Identity => "none".into(),
                crate::ops::Act::Relu => "relu".into(),
                crate::ops::Act::LeakyRelu(s) => format!("lrelu({s})"),
                crate::ops::Act::Tanh => "tanh".into(),
            },
            scale_offset: u.scale_offset,
        }
    }
}

impl std::fmt::Display for LayerRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let scales = match self.scale_offset {
            Some(off) => format!("scales[{off}..{}]", off + self.out_channels),
            None => "-".into(),
        };
        write!(
            f,
            "{:<10} {:<16} {:>4} -> {:<4} k{} {:<4} {:<10} {}",
            self.name,
            self.op,
            self.in_channels,
            self.out_channels,
            self.kernel,
            if self.norm { "IN" } else { "-" },
            self.activation,
            scales
        )
    }
}
