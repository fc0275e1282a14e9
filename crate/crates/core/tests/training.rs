use lfs_core::data::{synth_dataset, SynthShapesSpec};
use lfs_core::latent::sample_latent;
use lfs_core::train::{
    lsgan_d_loss, lsgan_g_loss, load_checkpoint, save_checkpoint, LossConfig, TrainConfig,
    TrainState, CHECKPOINT_MAGIC, OBJECTIVE_TERMS,
};
use lfs_core::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.generator.base_channels = 4;
    c.generator.n_res_blocks = 1;
    c.discriminator.base_channels = 4;
    c.discriminator.n_layers = 1;
    c.mapper.hidden_sizes = vec![16];
    c.batch_size = 2;
    c
}

#[test]
fn objective_has_exactly_the_two_adversarial_terms() {
    assert_eq!(OBJECTIVE_TERMS, ["lsgan_d", "lsgan_g"]);
    let data = synth_dataset(&SynthShapesSpec::new(4, 16, 0)).unwrap();
    let mut state = TrainState::new(small()).unwrap();
    let m = state.fit(&data, 1, |_, _| Ok(())).unwrap()[0];
    let v: serde_json::Value = serde_json::from_str(&m.to_json_line()).unwrap();
    let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["d_loss", "g_loss", "step", "wall_time"]);
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let data = synth_dataset(&SynthShapesSpec::new(6, 16, 1)).unwrap();
    let mut full = TrainState::new(small()).unwrap();
    let log_full = full.fit(&data, 8, |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.lfs");
    let mut first = TrainState::new(small()).unwrap();
    let mut log = first.fit(&data, 4, |_, _| Ok(())).unwrap();
    save_checkpoint(&first, &path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..8], CHECKPOINT_MAGIC);
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed.step, 4);
    log.extend(resumed.fit(&data, 4, |_, _| Ok(())).unwrap());

    let losses = |l: &[lfs_core::train::StepMetrics]| l.iter().map(|m| (m.step, m.d_loss, m.g_loss)).collect::<Vec<_>>();
    assert_eq!(losses(&log_full), losses(&log));
    for ((na, a), (nb, b)) in full.named_parameters().into_iter().zip(resumed.named_parameters()) {
        assert_eq!(na, nb);
        assert_eq!(a.data(), b.data(), "{na}");
    }
}

#[test]
fn frozen_ablation_ignores_the_code_after_training() {
    let data = synth_dataset(&SynthShapesSpec::new(4, 16, 2)).unwrap();
    let mut state = TrainState::new(TrainConfig {
        freeze_scales_to_one: true,
        ..small()
    })
    .unwrap();
    let mapper_before = state.mapper.clone();
    state.fit(&data, 3, |_, _| Ok(())).unwrap();
    assert_eq!(state.mapper, mapper_before);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
    let a = state.translate(&x, &[sample_latent(8, &mut rng).unwrap()]).unwrap();
    let b = state.translate(&x, &[sample_latent(8, &mut rng).unwrap()]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_inputs_report_divergence() {
    let mut state = TrainState::new(small()).unwrap();
    let x = Tensor::<f32>::full(&[2, 3, 16, 16], 0.0);
    let y = Tensor::<f32>::full(&[2, 3, 16, 16], f32::NAN);
    match state.train_step(&x, &y) {
        Err(Error::Divergence { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let data = synth_dataset(&SynthShapesSpec::new(4, 16, 3)).unwrap();
    let run = |seed| {
        let mut s = TrainState::new(TrainConfig { seed, ..small() }).unwrap();
        s.fit(&data, 2, |_, _| Ok(())).unwrap().iter().map(|m| m.d_loss).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

proptest! {
    #[test]
    fn losses_are_non_negative_and_zero_only_at_targets(
        real in prop::collection::vec(-3.0f64..3.0, 1..20),
        fake in prop::collection::vec(-3.0f64..3.0, 1..20),
        target in 0.5f64..=1.0,
    ) {
        let cfg = LossConfig { smooth_target: target, ..LossConfig::default() };
        let r = Tensor::from_vec(&[real.len()], real.clone()).unwrap();
        let f = Tensor::from_vec(&[fake.len()], fake.clone()).unwrap();
        let d = lsgan_d_loss(&r, &f, &cfg).unwrap();
        let g = lsgan_g_loss(&f, &cfg).unwrap();
        prop_assert!(d >= 0.0 && g >= 0.0);
        let mean_sq = |v: &[f64], t: f64| v.iter().map(|s| (s - t).powi(2)).sum::<f64>() / v.len() as f64;
        prop_assert!((d - mean_sq(&real, target) - mean_sq(&fake, 0.0)).abs() <= 1e-12);
        prop_assert!((g - mean_sq(&fake, target)).abs() <= 1e-12);
        let at_target = Tensor::full(&[3], target);
        prop_assert_eq!(lsgan_d_loss(&at_target, &Tensor::full(&[3], 0.0), &cfg).unwrap(), 0.0);
        prop_assert_eq!(lsgan_g_loss(&at_target, &cfg).unwrap(), 0.0);
    }
}
