use lalic::pipeline::{test_pattern, Codec};
use lalic::transforms::{parameter_count, ModelConfig, Transforms, WeightStore};
use lalic::Tensor;
use proptest::prelude::*;

fn config() -> impl Strategy<Value = ModelConfig> {
    (
        prop::array::uniform4(0usize..=2),
        prop::array::uniform3(2usize..=12),
        (1usize..=6).prop_map(|m| 8 * m),
        2usize..=12,
        prop::sample::select(vec![3usize, 5]),
        prop::sample::select(vec![1usize, 3]),
        (0usize..=1, 2usize..=12, 0usize..=1, 0usize..=2),
        any::<u64>(),
    )
        .prop_map(|(blocks, channels, m, n, main_kernel, hyper_kernel, (hb, cw, cb, agg), cut)| {
            // Random composition of m into at most four positive chunks.
            let mut cuts: Vec<usize> = (0..3).map(|i| 1 + ((cut >> (16 * i)) as usize % (m - 1))).collect();
            cuts.extend([0, m]);
            cuts.sort_unstable();
            cuts.dedup();
            let chunks = cuts.windows(2).map(|w| w[1] - w[0]).collect();
            ModelConfig {
                stage_blocks: blocks,
                stage_channels: channels,
                latent_channels: m,
                hyper_channels: n,
                hidden_ratio: 1 + hb,
                main_kernel,
                hyper_kernel,
                hyper_blocks: hb,
                context_width: cw,
                context_blocks: cb,
                aggregation_ratio: 1,
                aggregation_layers: agg,
                chunks,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transform_shapes_follow_config(cfg in config(), seed in any::<u64>()) {
        let store = WeightStore::init(&cfg, seed).unwrap();
        let listed: usize = store.tensors().values().map(|t| t.len()).sum();
        prop_assert_eq!(listed, parameter_count(&cfg));
        let t = Transforms::<f32>::load(&store).unwrap();
        let m = cfg.latent_channels;
        let y = t.analysis(&Tensor::full(&[3, 64, 128], 0.5)).unwrap();
        prop_assert_eq!(y.shape(), &[m, 4, 8][..]);
        prop_assert_eq!(t.synthesis(&y).unwrap().shape().to_vec(), vec![3, 64, 128]);
        let z = t.hyper_analysis(&y).unwrap();
        prop_assert_eq!(z.shape(), &[cfg.hyper_channels, 1, 2][..]);
        prop_assert_eq!(t.hyper_synthesis(&z).unwrap().shape().to_vec(), vec![2 * m, 4, 8]);
    }

    #[test]
    fn latent_round_trip_on_any_config(cfg in config(), seed in any::<u64>()) {
        let store = WeightStore::init(&cfg, seed).unwrap();
        let codec = Codec::<f32>::new(&store).unwrap();
        let img = test_pattern(70, 33, seed);
        let enc = codec.compress(&img).unwrap();
        let dec = codec.decompress(&enc.bytes).unwrap();
        prop_assert_eq!(dec.y_hat.fingerprint(), enc.y_hat.fingerprint());
        prop_assert_eq!((dec.image.width, dec.image.height), (70, 33));
    }
}
