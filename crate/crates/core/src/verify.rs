//! Self-contained numerical checks of the scaling mechanism.
//!
//! Each check returns a [`CheckResult`] carrying the measured quantity and
//! its tolerance; [`run_suite`] bundles them into a report that renders as
//! line-oriented text or `key=value` lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradient, check_gradient_piecewise, GradCheck, DEFAULT_FLOOR, DEFAULT_STEP};
use crate::latent::{init_mapper, sample_latent, Activation, LatentCode, Mapper, MapperConfig};
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::ops::{self, Padding};
use crate::scaledconv::{
    associativity_discrepancy, conv_forward, random_instance, scale_filters, scaled_conv_forward,
    ConvSpec, Instance,
};
use crate::tensor::{Element, Tensor};
use crate::train::{lsgan_d_loss, lsgan_g_grad, lsgan_g_loss, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
    Both,
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            "both" => Ok(Precision::Both),
            _ => Err(crate::Error::invalid(format!(
                "unknown precision {s:?} (expected single, double or both)"
            ))),
        }
    }
}

/// Deliberate corruption used to confirm the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Channel 0 of the feature-map side is multiplied by 1.01.
    MisscaleChannel,
}

pub const ASSOCIATIVITY_TOL_F64: f64 = 1e-12;
pub const ASSOCIATIVITY_TOL_F32: f64 = 1e-5;
pub const FILTER_EQUIVALENCE_TOL: f64 = 1e-5;
pub const FILTER_EQUIVALENCE_INSTANCES: usize = 50;
pub const SCALE_GRAD_TOL: f64 = 1e-4;
pub const MAPPER_GRAD_TOL: f64 = 1e-4;
pub const END_TO_END_GRAD_TOL: f64 = 1e-3;
/// Starting step for the end-to-end check; shrunk near ReLU kinks.
pub const END_TO_END_STEP: f64 = 1e-6;
pub const NORM_INVARIANCE_TOL: f64 = 1e-5;
pub const NORM_INVARIANCE_MAPS: usize = 100;
pub const LOSS_UNIT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst observed discrepancy (absolute or relative, per check).
    pub measured: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64, cases: usize) -> Self {
        CheckResult {
            name: name.to_string(),
            measured,
            tolerance,
            cases,
        }
    }

    pub fn passed(&self) -> bool {
        self.measured <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!(
                "{:<4} {:<32} max {:.3e} <= {:.1e} over {} cases\n",
                if c.passed() { "ok" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.cases
            );
        }
        s += if self.passed() { "all checks passed\n" } else { "verification FAILED\n" };
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!(
                "{0}.passed={1}\n{0}.measured={2:e}\n{0}.tolerance={3:e}\n{0}.cases={4}\n",
                c.name,
                c.passed(),
                c.measured,
                c.tolerance,
                c.cases
            );
        }
        s += &format!("passed={}\n", self.passed());
        s
    }
}

fn tamper<T: Element>(fault: Fault) -> impl Fn(Tensor<T>) -> Tensor<T> {
    move |mut t: Tensor<T>| {
        if fault == Fault::MisscaleChannel {
            let plane = t.shape()[2] * t.shape()[3];
            for v in &mut t.data_mut()[..plane] {
                *v *= T::from_f64_lossy(1.01);
            }
        }
        t
    }
}

pub fn check_associativity<T: Element>(trials: usize, seed: u64, fault: Fault) -> Result<CheckResult> {
    let tol = match T::DTYPE {
        crate::tensor::DType::F64 => ASSOCIATIVITY_TOL_F64,
        crate::tensor::DType::F32 => ASSOCIATIVITY_TOL_F32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inst: Instance<T> = random_instance(&mut rng);
        worst = worst.max(associativity_discrepancy(&inst, tamper(fault))?);
    }
    let name = format!("associativity_{}", T::DTYPE.name());
    Ok(CheckResult::new(&name, worst, tol, trials))
}

/// Scaled convolution against convolution with pre-scaled filters and bias,
/// in single precision.
pub fn check_filter_equivalence(seed: u64, fault: Fault) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF117);
    let mut worst = 0.0f64;
    for _ in 0..FILTER_EQUIVALENCE_INSTANCES {
        let inst: Instance<f32> = random_instance(&mut rng);
        let [co, ci, k, _] = inst.weights.shape().try_into().unwrap();
        let spec = ConvSpec::new(ci, co, k, inst.stride, inst.padding)?;
        let scaled = scaled_conv_forward(&inst.input, &spec, &inst.weights, Some(&inst.bias), &inst.scales)?;
        let (w, b) = scale_filters(&inst.weights, Some(&inst.bias), &inst.scales)?;
        let direct = conv_forward(&inst.input, &spec, &w, b.as_ref())?;
        worst = worst.max(tamper(fault)(scaled).max_abs_diff(&direct));
    }
    Ok(CheckResult::new(
        "filter_equivalence_f32",
        worst,
        FILTER_EQUIVALENCE_TOL,
        FILTER_EQUIVALENCE_INSTANCES,
    ))
}

fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// d/d scales of `<r, scaled_conv_forward(x, s)>` on a 2x2x4x4 input with
/// 3 filters, double precision.
pub fn check_scale_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CA1E);
    let mut worst = GradCheck {
        entries: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    let trials = 10;
    for t in 0..trials {
        let padding = if t % 2 == 0 { Padding::Zero(1) } else { Padding::Reflect(1) };
        let spec = ConvSpec::new(2, 3, 3, 1, padding)?;
        let x = Tensor::<f64>::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&spec.weight_shape(), 0.5, &mut rng);
        let b = Tensor::<f64>::randn(&[3], 0.5, &mut rng);
        let s = random_weights(3, &mut rng);
        let plain = conv_forward(&x, &spec, &w, Some(&b))?;
        let r = random_weights(plain.len(), &mut rng);
        let dy = Tensor::from_vec(plain.shape(), r.clone())?;
        let per_item: Vec<f64> = s.iter().chain(&s).copied().collect();
        let (_, ds) = ops::scale_channels_backward(&plain, &per_item, &dy)?;
        let analytic: Vec<f64> = (0..3).map(|j| ds[j] + ds[3 + j]).collect();
        let r2 = r.clone();
        let g = check_gradient(
            |p| dot(scaled_conv_forward(&x, &spec, &w, Some(&b), p).unwrap().data(), &r2),
            &s,
            &analytic,
            DEFAULT_STEP,
            DEFAULT_FLOOR,
        );
        worst = worst.merge(g);
    }
    Ok(CheckResult::new(
        "scale_gradient_f64",
        worst.max_relative_error,
        SCALE_GRAD_TOL,
        worst.entries,
    ))
}

fn mapper_with_params(m: &Mapper<f64>, flat: &[f64]) -> Mapper<f64> {
    let mut out = m.clone();
    let mut it = flat.iter();
    for p in out.parameters_mut() {
        for v in p.data_mut() {
            *v = *it.next().unwrap();
        }
    }
    out
}

/// Jacobian of the mapper with respect to its parameters and its input,
/// probed through random output projections, for every activation and
/// with and without bias (k = 4, S = 8, double precision).
pub fn check_mapper_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3A99);
    let mut worst = GradCheck {
        entries: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    for activation in [Activation::Tanh, Activation::Lrelu, Activation::Linear] {
        for use_bias in [true, false] {
            let cfg = MapperConfig {
                k: 4,
                hidden_sizes: vec![6],
                activation,
                use_bias,
                ..MapperConfig::default()
            };
            let mapper: Mapper<f64> = init_mapper(&cfg, 8, &mut rng)?;
            for _ in 0..3 {
                let z: LatentCode<f64> = sample_latent(4, &mut rng)?;
                let r = random_weights(8, &mut rng);
                let (_, trace) = mapper.map_traced(&z)?;
                let grads = mapper.backward(&trace, &r)?;

                let r1 = r.clone();
                let g_in = check_gradient(
                    |p| dot(mapper.map(&LatentCode::new(p.to_vec()).unwrap()).unwrap().values(), &r1),
                    z.values(),
                    &grads.input,
                    DEFAULT_STEP,
                    DEFAULT_FLOOR,
                );
                let flat: Vec<f64> = mapper.parameters().iter().flat_map(|t| t.data().to_vec()).collect();
                let analytic: Vec<f64> = grads.params.iter().flat_map(|t| t.data().to_vec()).collect();
                let g_par = check_gradient(
                    |p| dot(mapper_with_params(&mapper, p).map(&z).unwrap().values(), &r),
                    &flat,
                    &analytic,
                    DEFAULT_STEP,
                    DEFAULT_FLOOR,
                );
                worst = worst.merge(g_in).merge(g_par);
            }
        }
    }
    Ok(CheckResult::new(
        "mapper_gradient_f64",
        worst.max_relative_error,
        MAPPER_GRAD_TOL,
        worst.entries,
    ))
}

/// The smallest model the end-to-end check runs through.
pub fn tiny_model(seed: u64) -> Result<(Generator<f64>, Discriminator<f64>, Mapper<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::new(
        &GeneratorConfig {
            base_channels: 4,
            n_downsample: 1,
            n_res_blocks: 1,
            ..GeneratorConfig::default()
        },
        &mut rng,
    )?;
    let d = Discriminator::new(
        &DiscriminatorConfig {
            base_channels: 4,
            n_layers: 1,
            ..DiscriminatorConfig::default()
        },
        &mut rng,
    )?;
    let cfg = MapperConfig {
        hidden_sizes: vec![16],
        ..MapperConfig::default()
    };
    let m = init_mapper(&cfg, g.modulated_channel_count(), &mut rng)?;
    Ok((g, d, m))
}

/// Generator loss as a function of the code, and its analytic gradient.
pub fn end_to_end_loss_and_grad(
    g: &Generator<f64>,
    d: &Discriminator<f64>,
    m: &Mapper<f64>,
    x: &Tensor<f64>,
    z: &LatentCode<f64>,
) -> Result<(f64, Vec<f64>)> {
    let cfg = LossConfig::default();
    let (scales, m_trace) = m.map_traced(z)?;
    let (fake, g_trace) = g.forward_traced(x, Some(std::slice::from_ref(&scales)))?;
    let (scores, d_trace) = d.forward_traced(&fake)?;
    let loss = lsgan_g_loss(&scores, &cfg)?;
    let d_img = d
        .backward(&d_trace, &lsgan_g_grad(&scores, &cfg), false, true)?
        .input
        .expect("input gradient requested");
    let g_grads = g.backward(&g_trace, &d_img)?;
    let dz = m.backward(&m_trace, &g_grads.scales[0])?.input;
    Ok((loss, dz))
}

/// d(LSGAN generator loss)/dz through mapper, generator and discriminator,
/// on 8x8 inputs in double precision.
pub fn check_end_to_end_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE2E);
    let mut worst = GradCheck {
        entries: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    for trial in 0..3 {
        let (g, d, m) = tiny_model(seed.wrapping_add(trial))?;
        let x = Tensor::<f64>::uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
        let z: LatentCode<f64> = sample_latent(m.config().k, &mut rng)?;
        let (_, dz) = end_to_end_loss_and_grad(&g, &d, &m, &x, &z)?;
        let r = check_gradient_piecewise(
            |p| {
                end_to_end_loss_and_grad(&g, &d, &m, &x, &LatentCode::new(p.to_vec()).unwrap())
                    .unwrap()
                    .0
            },
            z.values(),
            &dz,
            END_TO_END_STEP,
            DEFAULT_FLOOR,
            3,
        );
        worst = worst.merge(r);
    }
    Ok(CheckResult::new(
        "end_to_end_gradient_f64",
        worst.max_relative_error,
        END_TO_END_GRAD_TOL,
        worst.entries,
    ))
}

/// `IN(c x) = sign(c) IN(x)` per channel. The normalization epsilon breaks
/// exact invariance by roughly `eps * |1 - 1/c^2| / (2 var)` per unit of
/// normalized output, so maps are drawn with spatial std in `[4, 8]` and
/// `|c|` in `[0.5, 2]`, where that term sits well below the tolerance.
pub fn check_norm_invariance(seed: u64, fault: Fault) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7);
    let mut worst = 0.0f64;
    for _ in 0..NORM_INVARIANCE_MAPS {
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(4..=12),
            rng.random_range(4..=12),
        ];
        let std = rng.random_range(4.0..8.0);
        let mut x = Tensor::<f32>::randn(&shape, std, &mut rng);
        let offset = rng.random_range(-3.0f32..3.0);
        x = x.map(|v| v + offset);
        let planes = shape[0] * shape[1];
        let c: Vec<f32> = (0..planes)
            .map(|_| {
                let mag = rng.random_range(0.5f32..2.0);
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let (base, _) = ops::instance_norm(&x)?;
        let scaled_input = tamper(fault)(ops::scale_channels(&x, &c)?);
        let (scaled, _) = ops::instance_norm(&scaled_input)?;
        let signs: Vec<f32> = c.iter().map(|v| v.signum()).collect();
        let expected = ops::scale_channels(&base, &signs)?;
        worst = worst.max(scaled.max_abs_diff(&expected));
    }
    Ok(CheckResult::new(
        "norm_invariance_f32",
        worst,
        NORM_INVARIANCE_TOL,
        NORM_INVARIANCE_MAPS,
    ))
}

/// The four constant-score cases of the smoothed least-squares loss.
pub fn check_loss_unit_values() -> Result<CheckResult> {
    let cfg = LossConfig::default();
    let full = |v: f64| Tensor::<f64>::full(&[1, 1, 6, 6], v);
    let cases = [
        (lsgan_d_loss(&full(0.9), &full(0.0), &cfg)?, 0.0),
        (lsgan_d_loss(&full(0.0), &full(0.0), &cfg)?, 0.81),
        (lsgan_g_loss(&full(0.9), &cfg)?, 0.0),
        (lsgan_g_loss(&full(0.0), &cfg)?, 0.81),
    ];
    let worst = cases.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    Ok(CheckResult::new("loss_unit_values", worst, LOSS_UNIT_TOL, cases.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub precision: Precision,
    pub trials: usize,
    pub seed: u64,
    pub fault: Fault,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            precision: Precision::Both,
            trials: 100,
            seed: 0,
            fault: Fault::None,
        }
    }
}

pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    if matches!(opts.precision, Precision::Double | Precision::Both) {
        checks.push(check_associativity::<f64>(opts.trials, opts.seed, opts.fault)?);
    }
    if matches!(opts.precision, Precision::Single | Precision::Both) {
        checks.push(check_associativity::<f32>(opts.trials, opts.seed, opts.fault)?);
    }
    checks.push(check_filter_equivalence(opts.seed, opts.fault)?);
    checks.push(check_scale_gradient(opts.seed)?);
    checks.push(check_mapper_gradient(opts.seed)?);
    checks.push(check_end_to_end_gradient(opts.seed)?);
    checks.push(check_norm_invariance(opts.seed, opts.fault)?);
    checks.push(check_loss_unit_values()?);
    Ok(VerifyReport { checks })
}
