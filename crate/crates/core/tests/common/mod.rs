//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiking_harq::graph::{FireMode, Graph};
use spiking_harq::neuron::{GraphNeuron, NeuronKind, NeuronParams, NeuronState, ResetMode};
use spiking_harq::tensor::Tensor;

/// One neuron, one scalar at a time: charge, fire on `m > v_th`, reset.
pub fn scalar_neuron(inputs: &[f64], v_th: f64, v_reset: f64, soft: bool) -> (Vec<u8>, Vec<f64>) {
    let mut m = 0.0;
    let mut spikes = Vec::new();
    let mut membranes = Vec::new();
    for &x in inputs {
        m += x;
        if m > v_th {
            spikes.push(1);
            m = if soft { m - v_th } else { v_reset };
        } else {
            spikes.push(0);
        }
        membranes.push(m);
    }
    (spikes, membranes)
}

/// Random input traces `[neurons][steps]` in `[-0.5, 1.5)`.
pub fn random_traces(seed: u64, neurons: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..neurons)
        .map(|_| (0..steps).map(|_| rng.random_range(-0.5..1.5)).collect())
        .collect()
}

/// Runs `traces` through the layer implementations (plain IF, IHF and the
/// graph neuron in hard mode) and counts elementwise disagreements with
/// [`scalar_neuron`].
pub fn neuron_oracle_mismatches(traces: &[Vec<f64>], params: NeuronParams) -> usize {
    let n = traces.len();
    let steps = traces[0].len();
    let soft = params.reset == ResetMode::Soft;
    let oracle: Vec<(Vec<u8>, Vec<f64>)> = traces
        .iter()
        .map(|tr| scalar_neuron(tr, params.v_th, params.v_reset, soft))
        .collect();
    let mut if_layer = NeuronState::new(&[n], params, NeuronKind::If).unwrap();
    let mut ihf_layer = NeuronState::new(&[n], params, NeuronKind::Ihf).unwrap();
    let mut graph = Graph::new(FireMode::Hard);
    let mut graph_neuron = GraphNeuron::new(params);
    let mut bad = 0;
    for t in 0..steps {
        let input = Tensor::new(vec![n], traces.iter().map(|tr| tr[t]).collect()).unwrap();
        let s_if = if_layer.if_step(&input).unwrap();
        let (s_ihf, m_ihf) = ihf_layer.ihf_step(&input).unwrap();
        let x = graph.input(&input).unwrap();
        let (s_g, m_g) = graph_neuron.step(&mut graph, x).unwrap();
        for i in 0..n {
            let (want_s, want_m) = (oracle[i].0[t], oracle[i].1[t]);
            bad += usize::from(s_if.bits()[i] != want_s);
            bad += usize::from(if_layer.membrane.values()[i] != want_m);
            bad += usize::from(s_ihf.bits()[i] != want_s);
            bad += usize::from(m_ihf.values()[i] != want_m);
            bad += usize::from(graph.value(s_g)[i] != f64::from(want_s));
            bad += usize::from(graph.value(m_g)[i] != want_m);
        }
    }
    bad
}

/// CRC-16/CCITT-FALSE over a bit sequence using a byte lookup table, with a
/// bitwise tail for lengths that are not a multiple of eight.
pub fn crc16_table(bits: &[bool]) -> u16 {
    let mut table = [0u16; 256];
    for (b, slot) in table.iter_mut().enumerate() {
        let mut r = (b as u16) << 8;
        for _ in 0..8 {
            r = if r & 0x8000 != 0 { (r << 1) ^ 0x1021 } else { r << 1 };
        }
        *slot = r;
    }
    let mut crc = 0xFFFFu16;
    let whole = bits.len() / 8 * 8;
    for byte in bits[..whole].chunks(8) {
        let v = byte.iter().fold(0u8, |acc, &b| acc << 1 | u8::from(b));
        crc = (crc << 8) ^ table[usize::from((crc >> 8) as u8 ^ v)];
    }
    for &b in &bits[whole..] {
        let top = (crc >> 15) as u8 ^ u8::from(b);
        crc <<= 1;
        if top == 1 {
            crc ^= 0x1021;
        }
    }
    crc
}

/// Dot product over the product of norms, by plain loops.
pub fn cosine_oracle(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    dot / (nu.sqrt() * nv.sqrt())
}

use spiking_harq::backbone::{Backbone, BackboneConfig};
use spiking_harq::codec::{codec_batch_loss, Codec, CodecConfig};
use spiking_harq::gradcheck::{finite_diff_check, GradCheckReport};

/// A codec small enough for an exhaustive finite-difference check.
pub fn reduced_codec_config() -> CodecConfig {
    CodecConfig {
        t0: 2,
        t_max: 3,
        payload_channels: 2,
        encoder_hidden: 4,
        recon_channels: 2,
        converter_hidden: 4,
        ..CodecConfig::default()
    }
}

/// Finite differences over every codec parameter of the full loss
/// (backbone edge → encoder → channel → reconstructor → converter → task head,
/// cross-entropy plus entropy regularizer), with relaxed firing and p = 0.
pub fn reduced_codec_gradcheck(t: usize) -> (usize, GradCheckReport) {
    let backbone = Backbone::init(&BackboneConfig::default(), 8, 4).unwrap();
    let cfg = reduced_codec_config();
    let codec = Codec::init(&cfg, backbone.feature_shape()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let images = Tensor::new(vec![3, 1, 8, 8], (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = [0usize, 2, 3];
    let shape = backbone.feature_shape();
    let mut groups = vec![codec.alpha.clone(), codec.beta.clone(), codec.gamma.clone()];
    let params = groups.iter().map(|g| g.num_params()).sum();
    let report = finite_diff_check(
        |g, gs| {
            let c = Codec::from_groups(&cfg, shape, gs[0].clone(), gs[1].clone(), gs[2].clone())?;
            let mut no_flips = ChaCha8Rng::seed_from_u64(0);
            codec_batch_loss(g, &backbone, &c, &images, &labels, t, 0.0, &mut no_flips)
        },
        &mut groups,
        FireMode::Relaxed,
        1e-5,
        1e-4,
    )
    .unwrap();
    (params, report)
}
