use lfs_core::latent::{init_mapper, sample_latent, FilterScales, MapperConfig};
use lfs_core::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModulatedLayers, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generator(base_channels: usize, n_downsample: usize, n_res_blocks: usize) -> Generator<f32> {
    let cfg = GeneratorConfig {
        base_channels,
        n_downsample,
        n_res_blocks,
        ..GeneratorConfig::default()
    };
    Generator::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn modulated_channel_counts_match_hand_counts() {
    // stem + downsampling + two convs per residual block + upsampling + RGB output
    assert_eq!(generator(64, 2, 9).modulated_channel_count(), 64 + (128 + 256) + 18 * 256 + (128 + 64) + 3);
    assert_eq!(generator(64, 2, 9).modulated_channel_count(), 5251);
    assert_eq!(generator(8, 1, 2).modulated_channel_count(), 99);
    assert_eq!(generator(16, 1, 3).modulated_channel_count(), 259);
    let output_only = GeneratorConfig {
        modulated_layers: ModulatedLayers::OutputOnly,
        ..GeneratorConfig::desk()
    };
    let g: Generator<f32> = Generator::new(&output_only, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(g.modulated_channel_count(), 3);
}

#[test]
fn layer_table_offsets_tile_the_scale_vector() {
    let g = generator(16, 1, 3);
    let mut next = 0;
    for row in g.layer_table() {
        if let Some(off) = row.scale_offset {
            assert_eq!(off, next, "{row}");
            next += row.out_channels;
        }
    }
    assert_eq!(next, g.modulated_channel_count());
}

#[test]
fn unit_scales_reproduce_the_plain_generator_bit_for_bit() {
    let g = generator(16, 1, 3);
    let x = Tensor::<f32>::uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let ones = FilterScales::ones(g.modulated_channel_count());
    let scaled = g.forward(&x, &[ones.clone(), ones]).unwrap();
    let plain = g.forward_plain(&x).unwrap();
    assert!(scaled.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn batch_items_do_not_interact() {
    let g = generator(8, 1, 2);
    let m = init_mapper::<f32, _>(&MapperConfig::default(), 99, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f32>::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
    let s: Vec<_> = (0..2)
        .map(|_| m.map(&sample_latent(8, &mut rng).unwrap()).unwrap())
        .collect();
    let both = g.forward(&x, &s).unwrap();
    for i in 0..2 {
        let one = g.forward(&x.slice_items(i, 1), &s[i..=i]).unwrap();
        assert_eq!(one.data(), both.item(i));
    }
}

#[test]
fn wrong_scale_length_is_rejected() {
    let g = generator(8, 1, 2);
    let x = Tensor::<f32>::zeros(&[1, 3, 16, 16]);
    assert!(g.forward(&x, &[FilterScales::ones(98)]).is_err());
}

#[test]
fn indivisible_input_size_is_rejected() {
    let g = generator(8, 2, 1);
    assert!(g.forward_plain(&Tensor::<f32>::zeros(&[1, 3, 18, 18])).is_err());
}

#[test]
fn desk_discriminator_emits_a_six_by_six_map() {
    let d: Discriminator<f32> =
        Discriminator::new(&DiscriminatorConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(d.output_size(64, 64), Some((6, 6)));
    let x = Tensor::<f32>::uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(d.forward(&x).unwrap().shape(), [2, 1, 6, 6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_keeps_size_and_stays_in_range(
        n_down in 0usize..=2,
        mult in 1usize..=3,
        seed in any::<u64>(),
        big in 0.5f32..8.0,
    ) {
        let g: Generator<f32> = Generator::new(
            &GeneratorConfig { base_channels: 4, n_downsample: n_down, n_res_blocks: 1, ..GeneratorConfig::default() },
            &mut ChaCha8Rng::seed_from_u64(seed),
        ).unwrap();
        let side = mult * (1 << n_down) * 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::<f32>::uniform(&[1, 3, side, side], -1.0, 1.0, &mut rng);
        let s = FilterScales::new(
            Tensor::<f32>::uniform(&[g.modulated_channel_count()], -big as f64, big as f64, &mut rng).into_vec(),
        );
        let y = g.forward(&x, &[s]).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, side, side][..]);
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
