use lfs_core::latent::{
    init_mapper, map_latent, sample_latent, Activation, LatentCode, Mapper, MapperConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mapper(activation: Activation, use_bias: bool, s: usize, seed: u64) -> Mapper<f64> {
    let cfg = MapperConfig {
        k: 8,
        hidden_sizes: vec![32],
        activation,
        use_bias,
        ..MapperConfig::default()
    };
    let mut m: Mapper<f64> = init_mapper(&cfg, s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    // Nonzero biases, so the bias checks are not vacuous.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for p in m.parameters_mut() {
        if p.shape().len() == 1 {
            *p = lfs_core::Tensor::randn(p.shape(), 0.5, &mut rng);
        }
    }
    m
}

fn code(v: &[f64]) -> LatentCode<f64> {
    LatentCode::new(v.to_vec()).unwrap()
}

#[test]
fn tanh_scales_are_bounded_for_a_thousand_codes() {
    let m = mapper(Activation::Tanh, true, 64, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let z = sample_latent::<f64, _>(8, &mut rng).unwrap();
        let s = map_latent(&m, &z).unwrap();
        assert_eq!(s.len(), 64);
        assert!(s.values().iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn same_seed_gives_same_codes_and_mapper() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| sample_latent::<f32, _>(8, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
    let init = |seed| {
        init_mapper::<f32, _>(&MapperConfig::default(), 99, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    assert_eq!(init(1), init(1));
    assert_ne!(init(1), init(2));
}

#[test]
fn no_bias_means_no_bias_parameters() {
    let cfg = MapperConfig {
        use_bias: false,
        hidden_sizes: vec![16, 12],
        ..MapperConfig::default()
    };
    let m: Mapper<f32> = init_mapper(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(m.layers().iter().all(|l| l.bias.is_none()));
    let shapes: Vec<Vec<usize>> = m.parameters().iter().map(|p| p.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![16, 8], vec![12, 16], vec![10, 12]]);
    assert_eq!(m.output_size(), 10);
    assert_eq!(m.parameter_count(), 16 * 8 + 12 * 16 + 10 * 12);
}

#[test]
fn zero_dimension_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_latent::<f32, _>(0, &mut rng).is_err());
    assert!(LatentCode::<f32>::new(vec![]).is_err());
    assert!(LatentCode::<f32>::new(vec![f32::NAN]).is_err());
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    num / den
}

fn offset_map(m: &Mapper<f64>, z: &[f64]) -> Vec<f64> {
    let zero = map_latent(m, &code(&[0.0; 8])).unwrap();
    let s = map_latent(m, &code(z)).unwrap();
    s.values().iter().zip(zero.values()).map(|(a, b)| a - b).collect()
}

proptest! {
    #[test]
    fn tanh_output_stays_open_interval(z in prop::collection::vec(-6.0f64..6.0, 8), seed in 0u64..50) {
        let m = mapper(Activation::Tanh, true, 16, seed);
        let s = map_latent(&m, &code(&z)).unwrap();
        prop_assert!(s.values().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn linear_bias_offset_is_additive_and_homogeneous(
        a in prop::collection::vec(-3.0f64..3.0, 8),
        b in prop::collection::vec(-3.0f64..3.0, 8),
        alpha in -4.0f64..4.0,
        seed in 0u64..50,
    ) {
        let m = mapper(Activation::Linear, true, 12, seed);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
        let ga = offset_map(&m, &a);
        let gb = offset_map(&m, &b);
        let add: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x + y).collect();
        prop_assert!(rel(&offset_map(&m, &sum), &add) <= 1e-6);
        let hom: Vec<f64> = ga.iter().map(|x| alpha * x).collect();
        if alpha.abs() > 1e-3 {
            prop_assert!(rel(&offset_map(&m, &scaled), &hom) <= 1e-6);
        }
    }

    #[test]
    fn scale_count_matches_output_size(s in 1usize..40, k in 1usize..6) {
        let cfg = MapperConfig { k, ..MapperConfig::default() };
        let m: Mapper<f32> = init_mapper(&cfg, s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let z = sample_latent::<f32, _>(k, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        prop_assert_eq!(map_latent(&m, &z).unwrap().len(), s);
        let wrong = sample_latent::<f32, _>(k + 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        prop_assert!(map_latent(&m, &wrong).is_err());
    }
}
