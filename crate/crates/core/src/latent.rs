//! Gaussian latent codes and the fully-connected mapper that turns a code
//! into one multiplicative scale per modulated generator filter.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_LATENT_DIM: usize = 8;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode<T = f32> {
    values: Vec<T>,
}

impl<T: Element> LatentCode<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        ensure!(!values.is_empty(), "latent code must have length >= 1");
        ensure!(
            values.iter().all(|v| v.is_finite()),
            "latent code entries must be finite"
        );
        Ok(LatentCode { values })
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![T::zero(); k])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cast<U: Element>(&self) -> LatentCode<U> {
        LatentCode {
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// `k` independent standard-normal draws.
pub fn sample_latent<T: Element, R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<LatentCode<T>> {
    ensure!(k >= 1, "latent dimension must be >= 1, got {k}");
    let values = (0..k)
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok(LatentCode { values })
}

/// `(1 - t) * z1 + t * z2`.
pub fn interpolate_codes<T: Element>(
    z1: &LatentCode<T>,
    z2: &LatentCode<T>,
    t: f64,
) -> Result<LatentCode<T>> {
    ensure!(
        z1.dim() == z2.dim(),
        "cannot interpolate codes of length {} and {}",
        z1.dim(),
        z2.dim()
    );
    ensure!((0.0..=1.0).contains(&t), "t must lie in [0, 1], got {t}");
    let tt = T::from_f64_lossy(t);
    let s = T::one() - tt;
    let values = z1
        .values
        .iter()
        .zip(&z2.values)
        .map(|(&a, &b)| s * a + tt * b)
        .collect();
    Ok(LatentCode { values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScales<T = f32> {
    values: Vec<T>,
}

impl<T: Element> FilterScales<T> {
    pub fn new(values: Vec<T>) -> Self {
        FilterScales { values }
    }

    pub fn ones(s: usize) -> Self {
        FilterScales {
            values: vec![T::one(); s],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Lrelu,
    Linear,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "lrelu" => Ok(Activation::Lrelu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::invalid(format!(
                "unknown activation `{other}` (expected tanh, lrelu or linear)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Lrelu => "lrelu",
            Activation::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub k: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub use_bias: bool,
    /// Only read when `activation` is [`Activation::Lrelu`].
    pub lrelu_slope: f64,
    /// Constant added to every output scale after the final activation.
    pub scale_shift: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            k: DEFAULT_LATENT_DIM,
            hidden_sizes: vec![DEFAULT_HIDDEN],
            activation: Activation::Tanh,
            use_bias: true,
            lrelu_slope: DEFAULT_LRELU_SLOPE,
            scale_shift: 0.0,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, "mapper k must be >= 1");
        ensure!(
            self.hidden_sizes.iter().all(|&h| h >= 1),
            "hidden sizes must be positive"
        );
        ensure!(
            self.activation != Activation::Lrelu
                || (self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0),
            "lrelu_slope must lie in (0, 1), got {}",
            self.lrelu_slope
        );
        ensure!(self.scale_shift.is_finite(), "scale_shift must be finite");
        Ok(())
    }

    fn act(&self) -> crate::ops::Act {
        match self.activation {
            Activation::Tanh => crate::ops::Act::Tanh,
            Activation::Lrelu => crate::ops::Act::LeakyRelu(self.lrelu_slope),
            Activation::Linear => crate::ops::Act::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Fully-connected network from a latent code to [`FilterScales`]; the
/// configured activation follows every layer, the output layer included.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapper<T = f32> {
    config: MapperConfig,
    layers: Vec<Dense<T>>,
    output_size: usize,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MapperTrace<T> {
    /// `inputs[i]` feeds layer `i`; the last entry is the final activation output.
    activations: Vec<Vec<T>>,
}

pub struct MapperGrads<T> {
    /// Same order as [`Mapper::parameters`].
    pub params: Vec<Tensor<T>>,
    pub input: Vec<T>,
}

/// Zero-mean Gaussian weights with std `1/sqrt(fan_in)`, zero biases.
pub fn init_mapper<T: Element, R: Rng + ?Sized>(
    config: &MapperConfig,
    output_size: usize,
    rng: &mut R,
) -> Result<Mapper<T>> {
    config.validate()?;
    ensure!(output_size >= 1, "mapper output size must be >= 1");
    let mut dims = vec![config.k];
    dims.extend_from_slice(&config.hidden_sizes);
    dims.push(output_size);
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            Dense {
                weight: Tensor::randn(&[fan_out, fan_in], 1.0 / (fan_in as f64).sqrt(), rng),
                bias: config.use_bias.then(|| Tensor::zeros(&[fan_out])),
            }
        })
        .collect();
    Ok(Mapper {
        config: config.clone(),
        layers,
        output_size,
    })
}

impl<T: Element> Mapper<T> {
    /// Build from explicit layers, checking that dimensions chain from `k` to the output.
    pub fn from_layers(config: MapperConfig, layers: Vec<Dense<T>>) -> Result<Self> {
        config.validate()?;
        ensure!(
            layers.len() == config.hidden_sizes.len() + 1,
            "expected {} layers, got {}",
            config.hidden_sizes.len() + 1,
            layers.len()
        );
        let mut fan_in = config.k;
        for (i, layer) in layers.iter().enumerate() {
            let shape = layer.weight.shape();
            ensure!(
                shape.len() == 2 && shape[1] == fan_in,
                "layer {i} weight {shape:?} does not accept {fan_in} inputs"
            );
            if let Some(h) = config.hidden_sizes.get(i) {
                ensure!(shape[0] == *h, "layer {i} width {} != {h}", shape[0]);
            }
            ensure!(
                layer.bias.is_some() == config.use_bias,
                "layer {i} bias presence disagrees with use_bias"
            );
            if let Some(b) = &layer.bias {
                ensure!(b.len() == shape[0], "layer {i} bias length mismatch");
            }
            fan_in = shape[0];
        }
        Ok(Mapper {
            config,
            layers,
            output_size: fan_in,
        })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            names.push(format!("mapper.{i}.weight"));
            if l.bias.is_some() {
                names.push(format!("mapper.{i}.bias"));
            }
        }
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> Mapper<U> {
        Mapper {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.as_ref().map(|b| b.cast()),
                })
                .collect(),
            output_size: self.output_size,
        }
    }

    pub fn map(&self, z: &LatentCode<T>) -> Result<FilterScales<T>> {
        Ok(self.map_traced(z)?.0)
    }

    pub fn map_traced(&self, z: &LatentCode<T>) -> Result<(FilterScales<T>, MapperTrace<T>)> {
        ensure!(
            z.dim() == self.config.k,
            "latent code has length {}, mapper expects {}",
            z.dim(),
            self.config.k
        );
        let act = self.config.act();
        let mut activations = vec![z.values().to_vec()];
        for layer in &self.layers {
            let input = activations.last().unwrap();
            let (out_dim, in_dim) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let w = layer.weight.data();
            let out: Vec<T> = (0..out_dim)
                .map(|o| {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut acc: T = row.iter().zip(input).map(|(&a, &b)| a * b).sum();
                    if let Some(b) = &layer.bias {
                        acc += b.data()[o];
                    }
                    act.apply(acc)
                })
                .collect();
            activations.push(out);
        }
        let shift = T::from_f64_lossy(self.config.scale_shift);
        let scales = activations
            .last()
            .unwrap()
            .iter()
            .map(|&v| v + shift)
            .collect();
        Ok((FilterScales::new(scales), MapperTrace { activations }))
    }

    /// Gradients of a scalar loss given `d loss / d scales`.
    pub fn backward(&self, trace: &MapperTrace<T>, d_scales: &[T]) -> Result<MapperGrads<T>> {
        ensure!(
            d_scales.len() == self.output_size,
            "scale gradient has length {}, expected {}",
            d_scales.len(),
            self.output_size
        );
        let act = self.config.act();
        let mut grad = d_scales.to_vec();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            let (out_dim, in_dim) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let pre: Vec<T> = grad
                .iter()
                .zip(output)
                .map(|(&g, &o)| g * act.grad_from_output(o))
                .collect();
            let mut dw = Tensor::zeros(&[out_dim, in_dim]);
            for o in 0..out_dim {
                for j in 0..in_dim {
                    dw.data_mut()[o * in_dim + j] = pre[o] * input[j];
                }
            }
            let db = layer
                .bias
                .as_ref()
                .map(|_| Tensor::from_vec(&[out_dim], pre.clone()).unwrap());
            let w = layer.weight.data();
            grad = (0..in_dim)
                .map(|j| (0..out_dim).map(|o| w[o * in_dim + j] * pre[o]).sum())
                .collect();
            per_layer.push((dw, db));
        }
        per_layer.reverse();
        let params = per_layer
            .into_iter()
            .flat_map(|(w, b)| std::iter::once(w).chain(b))
            .collect();
        Ok(MapperGrads {
            params,
            input: grad,
        })
    }
}

/// Free-function form of [`Mapper::map`].
pub fn map_latent<T: Element>(mapper: &Mapper<T>, z: &LatentCode<T>) -> Result<FilterScales<T>> {
    mapper.map(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_latent_is_deterministic() {
        let a: LatentCode<f64> = sample_latent(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: LatentCode<f64> = sample_latent(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 1);
    }

    #[test]
    fn sample_latent_rejects_zero_dim() {
        let r: Result<LatentCode<f32>> = sample_latent(0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sample_latent_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut sum = [0.0f64; 8];
        let mut sq = [0.0f64; 8];
        for _ in 0..n {
            let z: LatentCode<f64> = sample_latent(8, &mut rng).unwrap();
            for (i, v) in z.values().iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..8 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() <= 0.05, "coordinate {i} mean {mean}");
            assert!((var - 1.0).abs() <= 0.1, "coordinate {i} variance {var}");
        }
    }

    #[test]
    fn init_mapper_shapes_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = MapperConfig::default();
        let m: Mapper<f32> = init_mapper(&cfg, 2000, &mut rng).unwrap();
        let shapes: Vec<_> = m.parameters().iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![128, 8], vec![128], vec![2000, 128], vec![2000]]);
        assert!(m.layers()[0].bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));

        let cfg = MapperConfig {
            use_bias: false,
            ..cfg
        };
        let m: Mapper<f32> = init_mapper(&cfg, 2000, &mut rng).unwrap();
        assert_eq!(m.parameter_count(), 8 * 128 + 128 * 2000);
        assert!(m.layers().iter().all(|l| l.bias.is_none()));

        assert!(init_mapper::<f32, _>(&cfg, 0, &mut rng).is_err());
    }

    #[test]
    fn single_identity_layer_passes_code_through() {
        let cfg = MapperConfig {
            k: 1,
            hidden_sizes: vec![],
            activation: Activation::Linear,
            use_bias: false,
            ..MapperConfig::default()
        };
        let layer = Dense {
            weight: Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap(),
            bias: None,
        };
        let m = Mapper::from_layers(cfg, vec![layer]).unwrap();
        let s = m.map(&LatentCode::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(s.values(), &[0.5]);
    }

    #[test]
    fn zero_code_without_bias_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in [Activation::Tanh, Activation::Linear] {
            let cfg = MapperConfig {
                activation: act,
                use_bias: false,
                ..MapperConfig::default()
            };
            let m: Mapper<f64> = init_mapper(&cfg, 40, &mut rng).unwrap();
            let s = m.map(&LatentCode::zeros(8).unwrap()).unwrap();
            assert!(s.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Mapper<f32> = init_mapper(&MapperConfig::default(), 4, &mut rng).unwrap();
        assert!(m.map(&LatentCode::zeros(3).unwrap()).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let z1 = LatentCode::new(vec![0.0f64, 0.0]).unwrap();
        let z2 = LatentCode::new(vec![2.0f64, 4.0]).unwrap();
        assert_eq!(interpolate_codes(&z1, &z2, 0.0).unwrap(), z1);
        assert_eq!(interpolate_codes(&z1, &z2, 1.0).unwrap(), z2);
        assert_eq!(
            interpolate_codes(&z1, &z2, 0.5).unwrap().values(),
            &[1.0, 2.0]
        );
        assert!(interpolate_codes(&z1, &z2, 1.5).is_err());
        let z3 = LatentCode::new(vec![1.0f64]).unwrap();
        assert!(interpolate_codes(&z1, &z3, 0.5).is_err());
    }

    #[test]
    fn lrelu_slope_validated() {
        let cfg = MapperConfig {
            activation: Activation::Lrelu,
            lrelu_slope: 1.5,
            ..MapperConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
