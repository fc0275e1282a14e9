//! Adversarial training with the least-squares GAN loss and nothing else.
//!
//! Each step makes one discriminator update on `(y, G(x, z))` and one joint
//! generator + mapper update, with a fresh latent code per generated image.

mod checkpoint;
mod loss;
mod optim;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    lsgan_d_grad, lsgan_d_loss, lsgan_g_grad, lsgan_g_loss, LossConfig, Reduction,
    DEFAULT_SMOOTH_TARGET,
};
pub use optim::{Adam, OptimConfig};

use crate::data::{BatchSampler, UnpairedDataset};
use crate::error::{ensure, Error, Result};
use crate::latent::{init_mapper, sample_latent, FilterScales, LatentCode, Mapper, MapperConfig};
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub mapper: MapperConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// Ablation: ignore the mapper and feed unit scales to every layer.
    pub freeze_scales_to_one: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 1,
            mapper: MapperConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            freeze_scales_to_one: false,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: small generator and discriminator, batch of 4.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 4,
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be >= 1");
        self.mapper.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.loss.validate()?;
        self.optim.validate()
    }
}

/// One metrics record. These are the only quantities the objective has.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub wall_time: f64,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Names of every term summed into the training objective.
pub const OBJECTIVE_TERMS: [&str; 2] = ["lsgan_d", "lsgan_g"];

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub mapper: Mapper<f32>,
    pub(crate) opt_g: Adam,
    pub(crate) opt_d: Adam,
    pub step: u64,
    pub(crate) rng: ChaCha8Rng,
    pub sampler: BatchSampler,
    /// Free-form annotations stored alongside the checkpoint.
    pub meta: BTreeMap<String, String>,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(&config.generator, &mut init)?;
        let discriminator = Discriminator::new(&config.discriminator, &mut init)?;
        let mapper = init_mapper(&config.mapper, generator.modulated_channel_count(), &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let sampler = BatchSampler::from_seed(config.batch_size, config.seed)?;
        let opt_g = Adam::new(&Self::g_params(&generator, &mapper, config.freeze_scales_to_one));
        let opt_d = Adam::new(&discriminator.parameters());
        Ok(TrainState {
            config,
            generator,
            discriminator,
            mapper,
            opt_g,
            opt_d,
            step: 0,
            rng,
            sampler,
            meta: BTreeMap::new(),
        })
    }

    /// Parameters updated by the generator optimizer; the mapper is not
    /// part of the frozen-scale model.
    fn g_params<'a>(g: &'a Generator<f32>, m: &'a Mapper<f32>, frozen: bool) -> Vec<&'a Tensor<f32>> {
        let mut p = g.parameters();
        if !frozen {
            p.extend(m.parameters());
        }
        p
    }

    /// Scales used for code `z`, honoring the frozen-scale ablation.
    pub fn scales_for(&self, z: &LatentCode<f32>) -> Result<FilterScales<f32>> {
        if self.config.freeze_scales_to_one {
            Ok(FilterScales::ones(self.generator.modulated_channel_count()))
        } else {
            self.mapper.map(z)
        }
    }

    /// Translate a batch with one code per item.
    pub fn translate(&self, x: &Tensor<f32>, codes: &[LatentCode<f32>]) -> Result<Tensor<f32>> {
        let scales = codes
            .iter()
            .map(|z| self.scales_for(z))
            .collect::<Result<Vec<_>>>()?;
        self.generator.forward(x, &scales)
    }

    pub fn sample_code(&mut self) -> Result<LatentCode<f32>> {
        sample_latent(self.config.mapper.k, &mut self.rng)
    }

    /// One discriminator update and one generator + mapper update.
    pub fn train_step(&mut self, batch_x: &Tensor<f32>, batch_y: &Tensor<f32>) -> Result<StepMetrics> {
        let (n, _, _, _) = batch_x.dims4()?;
        ensure!(
            batch_y.dims4()?.1 == 3,
            "target batch must have 3 channels"
        );
        let cfg = self.config.loss.clone();
        let codes = (0..n).map(|_| self.sample_code()).collect::<Result<Vec<_>>>()?;
        let frozen = self.config.freeze_scales_to_one;
        let mut traces = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        for z in &codes {
            if frozen {
                scales.push(FilterScales::ones(self.generator.modulated_channel_count()));
            } else {
                let (s, t) = self.mapper.map_traced(z)?;
                scales.push(s);
                traces.push(t);
            }
        }
        let (fake, g_trace) = self.generator.forward_traced(batch_x, Some(&scales))?;

        // Discriminator update on real targets and detached fakes.
        let (real_scores, real_trace) = self.discriminator.forward_traced(batch_y)?;
        let (fake_scores, fake_trace) = self.discriminator.forward_traced(&fake)?;
        let d_loss = self.checked(lsgan_d_loss(&real_scores, &fake_scores, &cfg), &real_scores, &fake_scores)?;
        let (d_real, d_fake) = lsgan_d_grad(&real_scores, &fake_scores, &cfg);
        let mut d_grads = self
            .discriminator
            .backward(&real_trace, &d_real, true, false)?
            .params
            .unwrap();
        let fake_part = self
            .discriminator
            .backward(&fake_trace, &d_fake, true, false)?
            .params
            .unwrap();
        for (a, b) in d_grads.iter_mut().zip(&fake_part) {
            a.add_assign(b);
        }
        self.opt_d
            .step(&self.config.optim, self.discriminator.parameters_mut(), &d_grads)?;

        // Generator + mapper update against the updated discriminator.
        let (scores, trace) = self.discriminator.forward_traced(&fake)?;
        let g_loss = self.checked(lsgan_g_loss(&scores, &cfg), &scores, &scores)?;
        let d_scores = lsgan_g_grad(&scores, &cfg);
        let d_fake_img = self
            .discriminator
            .backward(&trace, &d_scores, false, true)?
            .input
            .unwrap();
        let g_grads = self.generator.backward(&g_trace, &d_fake_img)?;
        let mut grads = g_grads.params;
        let mut params = self.generator.parameters_mut();
        if !frozen {
            let mut acc: Option<Vec<Tensor<f32>>> = None;
            for (t, ds) in traces.iter().zip(&g_grads.scales) {
                let mg = self.mapper.backward(t, ds)?;
                match acc.as_mut() {
                    None => acc = Some(mg.params),
                    Some(a) => a.iter_mut().zip(&mg.params).for_each(|(x, y)| x.add_assign(y)),
                }
            }
            grads.extend(acc.unwrap());
            params.extend(self.mapper.parameters_mut());
        }
        self.opt_g.step(&self.config.optim, params, &grads)?;

        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            d_loss,
            g_loss,
            wall_time: 0.0,
        })
    }

    fn checked(&self, loss: Result<f64>, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
        let diverged = |detail: String| Error::Divergence {
            step: self.step,
            message: detail,
        };
        match loss {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(diverged(format!("loss is {v}; {}", score_summary(a, b)))),
            Err(e) => Err(diverged(format!("{e}; {}", score_summary(a, b)))),
        }
    }

    /// Run `steps` updates drawing batches from the state's own sampler.
    pub fn fit(
        &mut self,
        dataset: &UnpairedDataset,
        steps: u64,
        mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        let start = Instant::now();
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let (x, y) = self.sampler.next_batch(dataset)?;
            let mut m = self.train_step(&x, &y)?;
            m.wall_time = start.elapsed().as_secs_f64();
            on_step(&m, self)?;
            out.push(m);
        }
        Ok(out)
    }

    /// Parameter tensors of all three networks with stable names.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<f32>)> {
        let names = self
            .generator
            .parameter_names()
            .into_iter()
            .chain(self.discriminator.parameter_names())
            .chain(self.mapper.parameter_names());
        let tensors = self
            .generator
            .parameters()
            .into_iter()
            .chain(self.discriminator.parameters())
            .chain(self.mapper.parameters());
        names.zip(tensors).collect()
    }
}

fn score_summary(a: &Tensor<f32>, b: &Tensor<f32>) -> String {
    let stats = |t: &Tensor<f32>| {
        let finite = t.data().iter().filter(|v| v.is_finite()).count();
        let max = t
            .data()
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f32, |m, v| m.max(v.abs()));
        format!("{finite}/{} finite, max |score| {max}", t.len())
    };
    format!("scores A: {}; scores B: {}", stats(a), stats(b))
}
