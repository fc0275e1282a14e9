use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBackend {
    PixelL1,
    PerceptualPlugin,
}

impl std::fmt::Display for DistanceBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceBackend::PixelL1 => "pixel_l1",
            DistanceBackend::PerceptualPlugin => "perceptual_plugin",
        })
    }
}

/// A symmetric distance between two images of equal shape.
pub trait ImageDistance: Send + Sync {
    fn backend(&self) -> DistanceBackend;
    fn distance(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64>;
}

/// Mean absolute difference over every pixel and channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelL1;

impl ImageDistance for PixelL1 {
    fn backend(&self) -> DistanceBackend {
        DistanceBackend::PixelL1
    }

    fn distance(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
        ensure!(
            a.len() == b.len() && !a.is_empty(),
            "cannot compare images with {} and {} values",
            a.len(),
            b.len()
        );
        let sum: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum();
        Ok(sum / a.len() as f64)
    }
}

type DistanceFn = dyn Fn(&Tensor<f32>, &Tensor<f32>) -> Result<f64> + Send + Sync;

/// Wraps an externally provided perceptual metric (for example a network
/// with pretrained weights loaded by the caller). The description is
/// carried into reports so results from different plugins stay apart.
pub struct PerceptualPlugin {
    pub description: String,
    metric: Box<DistanceFn>,
}

impl PerceptualPlugin {
    pub fn new(
        description: impl Into<String>,
        metric: impl Fn(&Tensor<f32>, &Tensor<f32>) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        PerceptualPlugin {
            description: description.into(),
            metric: Box::new(metric),
        }
    }
}

impl ImageDistance for PerceptualPlugin {
    fn backend(&self) -> DistanceBackend {
        DistanceBackend::PerceptualPlugin
    }

    fn distance(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
        (self.metric)(a, b)
    }
}
