mod common;

use common::{random, rng};
use contextnet::analysis::count_params;
use contextnet::checkpoint::{decode_checkpoint, encode_checkpoint};
use contextnet::encoder::{default_config, reduced_config, Encoder, Reduction};
use contextnet::params::{Initializer, ParamStore};
use contextnet::training::{specaugment, SpecAugmentConfig};
use contextnet::transducer::{rnnt_loss, DecoderConfig, ModelConfig, Transducer};
use contextnet::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_with_balanced_gradient(seed in any::<u64>(), t in 1usize..7, u in 0usize..5, v in 2usize..7) {
        let mut r = rng(seed);
        let logits = random(&[t, u + 1, v], 4.0, &mut r);
        let labels: Vec<usize> = (0..u).map(|i| 1 + (seed as usize + i) % (v - 1)).collect();
        let (loss, grad) = rnnt_loss(&logits, &labels, 0).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        for row in grad.data().chunks(v) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn specaugment_only_zeroes(seed in any::<u64>(), t in 1usize..60, d in 1usize..20, f in 0usize..10, masks in 0usize..4) {
        let mut r = rng(seed);
        let x = random(&[t, d], 1.0, &mut r).map(|v| v + 2.0);
        let cfg = SpecAugmentConfig { freq_width: f, freq_masks: masks, time_masks: masks, time_ratio: 0.1 };
        let y = specaugment(&x, &cfg, &mut r).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        for (a, b) in x.data().iter().zip(y.data()) {
            prop_assert!(*b == *a || *b == 0.0);
        }
        if masks == 0 {
            prop_assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn output_length_law(t in 1usize..5000) {
        for (red, factor) in [(Reduction::X2, 2), (Reduction::X8, 8)] {
            let c = default_config(1.0, 5, red).unwrap();
            prop_assert_eq!(c.output_len(t), t.div_ceil(factor));
        }
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), n in 0usize..5) {
        let mut r = rng(seed);
        let tensors: Vec<(String, Tensor<f32>)> = (0..n)
            .map(|i| {
                let shape: Vec<usize> = (0..i % 3 + 1).map(|k| 1 + (seed as usize >> (4 * k)) % 5).collect();
                (format!("t{i}.w"), random(&shape, 3.0, &mut r).cast::<f32>())
            })
            .collect();
        let back = decode_checkpoint(&encode_checkpoint(&tensors).unwrap()).unwrap();
        prop_assert_eq!(back, tensors);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Counted parameters equal what the builders actually allocate.
    #[test]
    fn counts_match_allocation(alpha in 0.05f64..0.3, kernel in prop::sample::select(vec![3usize, 5, 7]), layers in 1usize..4, vocab in 2usize..40) {
        let encoder = reduced_config(alpha, kernel, layers).unwrap();
        let decoder = DecoderConfig { vocab_size: vocab, embed_dim: 8, hidden_dim: 12, joint_dim: 10 };
        let report = count_params(&encoder, Some(&decoder));
        prop_assert_eq!(report.total_params, report.encoder_params + report.decoder_params);
        prop_assert_eq!(report.encoder_params, report.per_block.iter().map(|b| b.params).sum::<usize>());

        let mut store = ParamStore::<f32>::new();
        Encoder::build(encoder.clone(), &mut Initializer { store: &mut store, rng: &mut rng(1) }, "encoder").unwrap();
        let allocated: usize = store.trainable_ids().map(|id| store.get(id).len()).sum();
        prop_assert_eq!(allocated, report.encoder_params);

        let mut store = ParamStore::<f32>::new();
        Transducer::build(ModelConfig { encoder, decoder }, &mut Initializer { store: &mut store, rng: &mut rng(2) }).unwrap();
        let allocated: usize = store.trainable_ids().map(|id| store.get(id).len()).sum();
        prop_assert_eq!(allocated, report.total_params);
    }
}
