mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiking_harq::backbone::{Backbone, BackboneConfig};
use spiking_harq::channel::ChannelModel;
use spiking_harq::codec::{entropy_penalty, entropy_regularizer, spike_entropy, Codec, StepOutputs};
use spiking_harq::graph::Graph;
use spiking_harq::layers::conv;
use spiking_harq::neuron::SpikeTensor;
use spiking_harq::tensor::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn half_ones(n: usize) -> SpikeTensor {
    SpikeTensor::new(vec![n], (0..n).map(|i| (i % 2) as u8).collect()).unwrap()
}

#[test]
fn entropy_examples() {
    assert_eq!(spike_entropy(&half_ones(64)), 1.0);
    assert_eq!(spike_entropy(&SpikeTensor::zeros(&[64])), 0.0);
    let quarter = SpikeTensor::new(vec![4], vec![1, 0, 0, 0]).unwrap();
    let h = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
    assert!((spike_entropy(&quarter) - h).abs() < 1e-15);
    assert!((h - 0.8113).abs() < 1e-4);

    assert_eq!(entropy_regularizer(&[half_ones(8), half_ones(8)]), 0.0);
    assert_eq!(entropy_regularizer(&[SpikeTensor::zeros(&[8])]), 1.0);
    assert_eq!(entropy_penalty(&[1.0, 0.5]), 0.0625);
}

/// Converter on `t` zero-padded step outputs equals a converter whose first
/// layer keeps only the weights of the first `t` step slots, applied to the
/// unpadded outputs.
#[test]
fn zero_padding_equals_truncated_weights() {
    let backbone = Backbone::init(&BackboneConfig::default(), 8, 4).unwrap();
    let cfg = common::reduced_codec_config();
    let codec = Codec::init(&cfg, backbone.feature_shape()).unwrap();
    let [_, h, w] = codec.feature_shape();
    let rc = cfg.recon_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in cfg.t0..=cfg.t_max {
        let mut outputs = StepOutputs::default();
        for _ in 0..t {
            outputs.push(random(&[rc, h, w], &mut rng), random(&[rc, h, w], &mut rng));
        }
        let padded = codec.convert(&outputs, t).unwrap();

        let mut gamma = codec.gamma.clone();
        let full = gamma.get("conv1.w").unwrap().clone();
        let [out_c, in_c] = [full.shape()[0], full.shape()[1]];
        let keep = 2 * rc * t;
        let mut vals = Vec::with_capacity(out_c * keep);
        for o in 0..out_c {
            vals.extend_from_slice(&full.values()[o * in_c..o * in_c + keep]);
        }
        gamma.insert("conv1.w", Tensor::new(vec![out_c, keep, 1, 1], vals).unwrap());

        let mut g = Graph::default();
        let mut parts = Vec::new();
        for (fs, fm) in &outputs.steps {
            parts.push(g.input(&fs.reshaped(&[1, rc, h, w]).unwrap()).unwrap());
            parts.push(g.input(&fm.reshaped(&[1, rc, h, w]).unwrap()).unwrap());
        }
        let x = g.concat(&parts).unwrap();
        let y = conv(&mut g, &gamma, "conv1", x).unwrap();
        let y = g.relu(y).unwrap();
        let y = conv(&mut g, &gamma, "conv2", y).unwrap();
        let truncated = g.value(y);
        for (a, b) in padded.tensor().values().iter().zip(truncated) {
            assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn out_of_range_steps_are_rejected() {
    let backbone = Backbone::init(&BackboneConfig::default(), 8, 4).unwrap();
    let cfg = common::reduced_codec_config();
    let codec = Codec::init(&cfg, backbone.feature_shape()).unwrap();
    let f = Tensor::zeros(&[1, 16, 4, 4]);
    let ch = ChannelModel::noiseless();
    let mut flips = spiking_harq::channel::SessionFlips {
        channel: ch,
        sessions: vec![0],
    };
    assert!(codec.reconstruct_batch(&f, cfg.t_max + 1, &mut flips).is_err());
    assert!(codec.reconstruct_batch(&f, cfg.t0 - 1, &mut flips).is_err());
    assert!(codec.reconstruct_batch(&f, cfg.t0, &mut flips).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn step_api_matches_batched_transmission(seed in any::<u64>(), ber in 0.0f64..0.4, t in 2usize..=3) {
        let backbone = Backbone::init(&BackboneConfig::default(), 8, 4).unwrap();
        let codec = Codec::init(&common::reduced_codec_config(), backbone.feature_shape()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = backbone.extract_features(&random(&[1, 8, 8], &mut rng)).unwrap();
        let ch = ChannelModel::new(ber, seed).unwrap();

        let mut enc = codec.start_encoder(&f).unwrap();
        let mut rec = codec.start_reconstructor().unwrap();
        let mut outputs = StepOutputs::default();
        for step in 1..=t {
            let s = codec.encode_step(&mut enc).unwrap();
            prop_assert!(s.bits().iter().all(|&b| b <= 1));
            let received = spiking_harq::channel::bsc_transmit(&s, &ch, &mut ch.substream(0, step as u64));
            let (fs, fm) = codec.reconstruct_step(&received, &mut rec).unwrap();
            outputs.push(fs, fm);
        }
        let stepped = codec.convert(&outputs, t).unwrap();

        let mut flips = spiking_harq::channel::SessionFlips { channel: ch, sessions: vec![0] };
        let batched = codec.reconstruct_batch(&f.as_batch(), t, &mut flips).unwrap();
        prop_assert_eq!(stepped.tensor().values(), batched.values());
    }
}
