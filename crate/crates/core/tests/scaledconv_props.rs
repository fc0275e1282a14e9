use lfs_core::ops::{instance_norm, scale_channels, Padding};
use lfs_core::scaledconv::oracle::direct_conv;
use lfs_core::{conv_forward, scale_filters, scaled_conv_forward, ConvSpec, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Zero-padded cross-correlation written out term by term.
fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    let xd = x.data();
    let wdat = w.data();
    for ni in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for u in 0..k {
                            for v in 0..k {
                                let r = (i * stride + u) as isize - pad as isize;
                                let s = (j * stride + v) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                                    continue;
                                }
                                acc += wdat[((o * c + ci) * k + u) * k + v]
                                    * xd[((ni * c + ci) * h + r as usize) * wd + s as usize];
                            }
                        }
                    }
                    out[((ni * co + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    c: usize,
    co: usize,
    k: usize,
    h: usize,
    stride: usize,
    pad: usize,
    seed: u64,
}

fn cases() -> impl Strategy<Value = Case> {
    (1usize..=2, 1usize..=3, 1usize..=4, prop::sample::select(vec![1usize, 3, 5]), 5usize..=9, 1usize..=2, any::<u64>())
        .prop_flat_map(|(n, c, co, k, h, stride, seed)| {
            (0..=k / 2).prop_map(move |pad| Case { n, c, co, k, h, stride, pad, seed })
        })
}

struct Inst {
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
    s: Vec<f64>,
    spec: ConvSpec,
}

fn build(case: &Case) -> Inst {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let spec = ConvSpec::new(case.c, case.co, case.k, case.stride, Padding::Zero(case.pad)).unwrap();
    let fan = (case.c * case.k * case.k) as f64;
    Inst {
        x: Tensor::uniform(&[case.n, case.c, case.h, case.h], -1.0, 1.0, &mut rng),
        w: Tensor::randn(&spec.weight_shape(), 1.0 / fan.sqrt(), &mut rng),
        b: Tensor::randn(&[case.co], 0.5, &mut rng),
        s: Tensor::<f64>::uniform(&[case.co], -2.0, 2.0, &mut rng).into_vec(),
        spec,
    }
}

fn per_channel_scale(t: &Tensor<f64>, s: &[f64]) -> Tensor<f64> {
    let (n, c, h, w) = t.dims4().unwrap();
    let mut out = t.clone();
    for ni in 0..n {
        for ci in 0..c {
            let start = (ni * c + ci) * h * w;
            for v in &mut out.data_mut()[start..start + h * w] {
                *v *= s[ci];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaled_conv_matches_naive_summation(case in cases()) {
        let i = build(&case);
        let ours = scaled_conv_forward(&i.x, &i.spec, &i.w, Some(&i.b), &i.s).unwrap();
        let reference = per_channel_scale(&naive(&i.x, &i.w, i.b.data(), case.stride, case.pad), &i.s);
        prop_assert!(ours.max_abs_diff(&reference) <= 1e-12);
    }

    #[test]
    fn feature_scaling_equals_filter_scaling(case in cases()) {
        let i = build(&case);
        let lhs = scaled_conv_forward(&i.x, &i.spec, &i.w, Some(&i.b), &i.s).unwrap();
        let (ws, bs) = scale_filters(&i.w, Some(&i.b), &i.s).unwrap();
        let rhs = conv_forward(&i.x, &i.spec, &ws, bs.as_ref()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        let oracle = direct_conv(&i.x, &ws, bs.as_ref(), case.stride, Padding::Zero(case.pad)).unwrap();
        prop_assert!(lhs.max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn doubling_the_scale_doubles_the_output(case in cases()) {
        let i = build(&case);
        let once = scaled_conv_forward(&i.x, &i.spec, &i.w, Some(&i.b), &i.s).unwrap();
        let doubled: Vec<f64> = i.s.iter().map(|v| 2.0 * v).collect();
        let twice = scaled_conv_forward(&i.x, &i.spec, &i.w, Some(&i.b), &doubled).unwrap();
        for (a, b) in twice.data().iter().zip(once.data()) {
            prop_assert!((a - 2.0 * b).abs() <= 1e-6 * (2.0 * b).abs().max(1e-12));
        }
    }

    #[test]
    fn single_precision_filter_equivalence(case in cases()) {
        let i = build(&case);
        let (x, w, b) = (i.x.cast::<f32>(), i.w.cast::<f32>(), i.b.cast::<f32>());
        let s: Vec<f32> = i.s.iter().map(|&v| v as f32).collect();
        let lhs = scaled_conv_forward(&x, &i.spec, &w, Some(&b), &s).unwrap();
        let (ws, bs) = scale_filters(&w, Some(&b), &s).unwrap();
        let rhs = conv_forward(&x, &i.spec, &ws, bs.as_ref()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }

    #[test]
    fn instance_norm_ignores_positive_scale_and_flips_on_negative(
        seed in any::<u64>(),
        mag in 0.5f64..2.0,
        negative in any::<bool>(),
        std in 4.0f64..8.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::randn(&[1, 2, 8, 8], std, &mut rng);
        let c = if negative { -mag } else { mag } as f32;
        let (base, _) = instance_norm(&x).unwrap();
        let (scaled, _) = instance_norm(&scale_channels(&x, &[c, c]).unwrap()).unwrap();
        let expected = base.map(|v| v * c.signum());
        prop_assert!(scaled.max_abs_diff(&expected) <= 1e-5);
    }
}

#[test]
fn instance_norm_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::randn(&[1, 1, 5, 5], 2.0, &mut rng);
    let d = x.data();
    let mean = d.iter().sum::<f64>() / 25.0;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
    let (y, _) = instance_norm(&x).unwrap();
    for (a, v) in y.data().iter().zip(d) {
        assert!((a - (v - mean) / (var + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn even_kernels_and_wrong_scale_counts_are_rejected() {
    assert!(ConvSpec::new(1, 1, 4, 1, Padding::Zero(1)).is_err());
    let spec = ConvSpec::new(1, 2, 3, 1, Padding::Zero(1)).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
    let w = Tensor::<f32>::zeros(&spec.weight_shape());
    assert!(scaled_conv_forward(&x, &spec, &w, None, &[1.0]).is_err());
}
