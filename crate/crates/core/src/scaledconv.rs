//! Channel-scaled convolution.
//!
//! Multiplying output channel `j` of a convolution by `c_j` is the same as
//! convolving with the filter `c_j * f_j` (and bias `c_j * b_j`), so the
//! latent scales can be applied to feature maps while still acting as
//! filter scales. [`oracle`] holds a direct-summation reference used to
//! check both forms.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::ops::{self, Padding};
use crate::tensor::{DType, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd, so `same` padding is symmetric.
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.in_channels > 0 && self.out_channels > 0,
            "channel counts must be positive"
        );
        ensure!(
            self.kernel_size % 2 == 1,
            "kernel size must be odd, got {}",
            self.kernel_size
        );
        ensure!(self.stride > 0, "stride must be positive");
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    fn check<T: Element>(
        &self,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<()> {
        self.validate()?;
        let (_, c, h, w) = input.dims4()?;
        ensure!(
            c == self.in_channels,
            "input has {c} channels, spec expects {}",
            self.in_channels
        );
        ensure!(h >= 1 && w >= 1, "spatial dimensions must be >= 1");
        ensure!(
            weights.shape() == self.weight_shape(),
            "weights {:?} do not match spec {:?}",
            weights.shape(),
            self.weight_shape()
        );
        if let Some(b) = bias {
            ensure!(
                b.len() == self.out_channels,
                "bias length {} != out channels {}",
                b.len(),
                self.out_channels
            );
        }
        Ok(())
    }
}

/// Padded cross-correlation (no kernel flip).
pub fn conv_forward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    spec.check(input, weights, bias)?;
    match spec.padding {
        Padding::Zero(p) => ops::conv2d(input, weights, bias, spec.stride, p),
        Padding::Reflect(p) => {
            let padded = ops::pad_reflect(input, p)?;
            ops::conv2d(&padded, weights, bias, spec.stride, 0)
        }
    }
}

/// Convolution whose output channel `j` (bias included) is multiplied by `scales[j]`.
pub fn scaled_conv_forward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    scales: &[T],
) -> Result<Tensor<T>> {
    ensure!(
        scales.len() == spec.out_channels,
        "got {} scales for {} output channels",
        scales.len(),
        spec.out_channels
    );
    let out = conv_forward(input, spec, weights, bias)?;
    let n = out.shape()[0];
    let per_item: Vec<T> = (0..n).flat_map(|_| scales.iter().copied()).collect();
    ops::scale_channels(&out, &per_item)
}

/// Multiply each output-channel filter slab and its bias entry by its scale.
pub fn scale_filters<T: Element>(
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    scales: &[T],
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (out_channels, _, _, _) = weights.dims4()?;
    ensure!(
        scales.len() == out_channels,
        "got {} scales for {out_channels} filters",
        scales.len()
    );
    let slab = weights.len() / out_channels;
    let mut w = weights.clone();
    for (j, &s) in scales.iter().enumerate() {
        for v in &mut w.data_mut()[j * slab..(j + 1) * slab] {
            *v *= s;
        }
    }
    let b = match bias {
        Some(b) => {
            ensure!(b.len() == out_channels, "bias length mismatch");
            let mut b = b.clone();
            for (v, &s) in b.data_mut().iter_mut().zip(scales) {
                *v *= s;
            }
            Some(b)
        }
        None => None,
    };
    Ok((w, b))
}

/// Direct-summation convolution, deliberately sharing no code with the
/// im2col path.
pub mod oracle {
    use super::*;

    fn source_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
        let n = n as isize;
        match padding {
            Padding::Zero(_) => (0..n).contains(&i).then_some(i as usize),
            Padding::Reflect(_) => {
                let mut r = i;
                if r < 0 {
                    r = -r;
                }
                if r >= n {
                    r = 2 * (n - 1) - r;
                }
                Some(r as usize)
            }
        }
    }

    pub fn direct_conv<T: Element>(
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.dims4()?;
        let (co, ci, k, _) = weights.dims4()?;
        ensure!(ci == c, "oracle channel mismatch");
        let p = padding.amount();
        ensure!(h + 2 * p >= k && w + 2 * p >= k, "kernel exceeds input");
        let ho = (h + 2 * p - k) / stride + 1;
        let wo = (w + 2 * p - k) / stride + 1;
        let x = input.data();
        let f = weights.data();
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        let o = out.data_mut();
        for b in 0..n {
            for oc in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(T::zero(), |bb| bb.data()[oc]);
                        for ic in 0..c {
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - p as isize;
                                let Some(sy) = source_index(iy, h, padding) else {
                                    continue;
                                };
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - p as isize;
                                    let Some(sx) = source_index(ix, w, padding) else {
                                        continue;
                                    };
                                    acc += f[((oc * c + ic) * k + ky) * k + kx]
                                        * x[((b * c + ic) * h + sy) * w + sx];
                                }
                            }
                        }
                        o[((b * co + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociativityReport {
    pub dtype: DType,
    pub trials: usize,
    pub tolerance: f64,
    pub max_discrepancy: f64,
    pub failures: usize,
}

impl AssociativityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random `(c, f, I)` instance: per-channel scalars, filters, image.
pub(crate) struct Instance<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub scales: Vec<T>,
    pub stride: usize,
    pub padding: Padding,
}

pub(crate) fn random_instance<T: Element, R: Rng + ?Sized>(rng: &mut R) -> Instance<T> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let co = rng.random_range(1..=4);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let h = rng.random_range(k.max(3)..=8);
    let w = rng.random_range(k.max(3)..=8);
    let stride = rng.random_range(1..=2);
    let p = rng.random_range(0..=k / 2);
    let padding = if rng.random_bool(0.5) {
        Padding::Zero(p)
    } else {
        Padding::Reflect(p)
    };
    Instance {
        input: Tensor::uniform(&[n, c, h, w], -1.0, 1.0, rng),
        // Fan-in scaling keeps outputs O(1), the regime the absolute
        // single-precision tolerance is stated for.
        weights: Tensor::randn(&[co, c, k, k], 1.0 / ((c * k * k) as f64).sqrt(), rng),
        bias: Tensor::randn(&[co], 0.5, rng),
        scales: (0..co)
            .map(|_| T::from_f64_lossy(rng.random_range(-2.0..2.0)))
            .collect(),
        stride,
        padding,
    }
}

/// Compare `(c * f) ⊛ I` against `c * (f ⊛ I)` on random instances, both
/// sides computed by the direct-summation oracle in precision `T`.
pub fn verify_associativity<T: Element, R: Rng + ?Sized>(
    trials: usize,
    rng: &mut R,
    tolerance: f64,
) -> Result<AssociativityReport> {
    ensure!(tolerance > 0.0, "tolerance must be positive");
    let mut report = AssociativityReport {
        dtype: T::DTYPE,
        trials,
        tolerance,
        max_discrepancy: 0.0,
        failures: 0,
    };
    for _ in 0..trials {
        let inst: Instance<T> = random_instance(rng);
        let d = associativity_discrepancy(&inst, |t| t)?;
        report.max_discrepancy = report.max_discrepancy.max(d);
        if d > tolerance {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// `tamper` lets a verification harness corrupt the feature-map side.
pub(crate) fn associativity_discrepancy<T: Element>(
    inst: &Instance<T>,
    tamper: impl Fn(Tensor<T>) -> Tensor<T>,
) -> Result<f64> {
    let (w, _) = scale_filters(&inst.weights, None, &inst.scales)?;
    let filter_side = oracle::direct_conv(&inst.input, &w, None, inst.stride, inst.padding)?;
    let plain = oracle::direct_conv(&inst.input, &inst.weights, None, inst.stride, inst.padding)?;
    let n = plain.shape()[0];
    let per_item: Vec<T> = (0..n).flat_map(|_| inst.scales.iter().copied()).collect();
    let map_side = tamper(ops::scale_channels(&plain, &per_item)?);
    Ok(filter_side.max_abs_diff(&map_side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(ci: usize, co: usize, k: usize, padding: Padding) -> ConvSpec {
        ConvSpec::new(ci, co, k, 1, padding).unwrap()
    }

    #[test]
    fn all_ones_center_sums_to_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv_forward(&x, &spec(1, 1, 3, Padding::Zero(1)), &w, None).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::uniform(&[2, 1, 5, 4], -1.0, 1.0, &mut rng);
        let mut w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        for padding in [Padding::Zero(1), Padding::Reflect(1)] {
            let y = conv_forward(&x, &spec(1, 1, 3, padding), &w, None).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn im2col_path_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[3], 1.0, &mut rng);
        for padding in [Padding::Zero(0), Padding::Zero(1), Padding::Reflect(1)] {
            for stride in [1, 2] {
                let s = ConvSpec::new(2, 3, 3, stride, padding).unwrap();
                let fast = conv_forward(&x, &s, &w, Some(&b)).unwrap();
                let slow = oracle::direct_conv(
                    &x.cast::<f64>(),
                    &w.cast(),
                    Some(&b.cast()),
                    stride,
                    padding,
                )
                .unwrap();
                assert!(fast.cast::<f64>().max_abs_diff(&slow) <= 1e-5);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(conv_forward(&x, &spec(1, 1, 3, Padding::Zero(1)), &w, None).is_err());
        assert!(ConvSpec::new(1, 1, 4, 1, Padding::Zero(1)).is_err());
    }

    #[test]
    fn unit_and_zero_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[2, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[2], 1.0, &mut rng);
        let s = spec(2, 2, 3, Padding::Reflect(1));
        let plain = conv_forward(&x, &s, &w, Some(&b)).unwrap();
        let ones = scaled_conv_forward(&x, &s, &w, Some(&b), &[1.0, 1.0]).unwrap();
        assert_eq!(plain, ones);
        let zeroed = scaled_conv_forward(&x, &s, &w, Some(&b), &[1.0, 0.0]).unwrap();
        assert!(zeroed.data()[36..].iter().all(|&v| v == 0.0));
        assert!(scaled_conv_forward(&x, &s, &w, Some(&b), &[1.0]).is_err());
    }

    #[test]
    fn scaled_conv_matches_prescaled_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f32>::uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[2], 1.0, &mut rng);
        let scales = [0.5f32, 2.0];
        let s = spec(3, 2, 3, Padding::Zero(1));
        let out = scaled_conv_forward(&x, &s, &w, Some(&b), &scales).unwrap();
        let (ws, bs) = scale_filters(&w, Some(&b), &scales).unwrap();
        let want = oracle::direct_conv(
            &x.cast::<f64>(),
            &ws.cast(),
            bs.map(|b| b.cast()).as_ref(),
            1,
            Padding::Zero(1),
        )
        .unwrap();
        assert!(out.cast::<f64>().max_abs_diff(&want) <= 1e-5);
    }

    #[test]
    fn scale_filters_arithmetic() {
        let w = Tensor::<f32>::full(&[2, 1, 3, 3], 0.5);
        let (same, _) = scale_filters(&w, None, &[1.0, 1.0]).unwrap();
        assert_eq!(same, w);
        let (scaled, _) = scale_filters(&w, None, &[2.0, 1.0]).unwrap();
        assert!(scaled.data()[..9].iter().all(|&v| v == 1.0));
        assert!(scaled.data()[9..].iter().all(|&v| v == 0.5));
        assert!(scale_filters(&w, None, &[2.0]).is_err());
    }

    #[test]
    fn unit_scalar_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let mut inst: Instance<f32> = random_instance(&mut rng);
            inst.scales.iter_mut().for_each(|s| *s = 1.0);
            assert_eq!(associativity_discrepancy(&inst, |t| t).unwrap(), 0.0);
        }
    }

    #[test]
    fn associativity_single_and_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = verify_associativity::<f32, _>(100, &mut rng, 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = verify_associativity::<f64, _>(100, &mut rng, 1e-12).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(verify_associativity::<f64, _>(1, &mut rng, 0.0).is_err());
    }
}
