//! Multi-rate spiking codec: encoder `alpha`, reconstructor `beta` and
//! converter `gamma`, sharing one parameter set across every time-step
//! count in `[t0, T]`.
//!
//! ```text
//! F ─1×1─▶ IF ─1×1─▶ IF ─▶ S_t ──BSC──▶ Ŝ_t ─1×1─┬─IF──▶ F_s^t
//!                                              └─IHF─▶ F_m^t
//! [F_s^1, F_m^1, …, F_s^t, F_m^t, 0 …] ─1×1─relu─1×1─▶ F′
//! ```
//!
//! The encoder sees the same feature every step; its hidden spiking layer
//! turns that constant drive into a time-varying current for the output
//! layer. The converter input is laid out as `(F_s^1, F_m^1, F_s^2, F_m^2, …)`
//! along the channel axis and zero-padded up to `T` steps; that layout is
//! part of the checkpoint contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{divergence, Backbone, EpochLog, Feature, Prediction};
use crate::channel::{FlipSource, SharedFlips};
use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::graph::{binary_entropy, Graph, Var};
use crate::layers::{argmax_rows, conv, init_conv};
use crate::neuron::{GraphNeuron, NeuronKind, NeuronParams, NeuronState, SpikeTensor};
use crate::optim::{Adam, TrainConfig};
use crate::tensor::{GroupTag, ParamGroup, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub seed: u64,
    /// Minimum number of time steps.
    pub t0: usize,
    /// Maximum number of time steps.
    pub t_max: usize,
    /// Channels of the per-step payload `S_t`; spatial size follows the feature.
    pub payload_channels: usize,
    pub encoder_hidden: usize,
    /// Channels of each reconstructor head.
    pub recon_channels: usize,
    pub converter_hidden: usize,
    pub encoder_neuron: NeuronParams,
    pub recon_if: NeuronParams,
    pub recon_ihf: NeuronParams,
    /// Training BER is drawn uniformly from `[ber_min, ber_max]`.
    pub ber_min: f64,
    pub ber_max: f64,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            seed: 23,
            t0: 4,
            t_max: 8,
            payload_channels: 8,
            encoder_hidden: 16,
            recon_channels: 8,
            converter_hidden: 32,
            encoder_neuron: NeuronParams::default(),
            recon_if: NeuronParams::default(),
            recon_ihf: NeuronParams::default(),
            ber_min: 0.0,
            ber_max: 0.3,
            train: TrainConfig {
                epochs: 24,
                batch_size: 32,
                lr: 2e-3,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 8,
                batch_size: 32,
                lr: 2e-4,
                ..TrainConfig::default()
            },
        }
    }
}

impl CodecConfig {
    /// Checks shared constraints; `t0 == t_max` is allowed (fixed rate).
    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 || self.t0 > self.t_max {
            return Err(Error::Config(format!(
                "codec needs 1 <= t0 <= T, got t0={} T={}",
                self.t0, self.t_max
            )));
        }
        if self.payload_channels == 0
            || self.encoder_hidden == 0
            || self.recon_channels == 0
            || self.converter_hidden == 0 {
            return Err(Error::Config("codec channel counts must be positive".into()));
        }
        if !(0.0 <= self.ber_min && self.ber_min <= self.ber_max && self.ber_max <= 0.5) {
            return Err(Error::Config(format!(
                "training BER range [{}, {}] must lie in [0, 0.5]",
                self.ber_min, self.ber_max
            )));
        }
        self.encoder_neuron.validate()?;
        self.recon_if.validate()?;
        self.recon_ihf.validate()
    }

    /// Multi-rate operation additionally needs `t0 < T`.
    pub fn validate_multi_rate(&self) -> Result<()> {
        self.validate()?;
        if self.t0 >= self.t_max {
            return Err(Error::Config(format!(
                "multi-rate codec needs t0 < T, got t0={} T={}",
                self.t0, self.t_max
            )));
        }
        Ok(())
    }

    /// A single-rate variant running exactly `t` steps.
    pub fn fixed_rate(&self, t: usize) -> Self {
        Self {
            t0: t,
            t_max: t,
            ..self.clone()
        }
    }
}

/// Binary entropy (bits) of the ones-frequency of `s`.
pub fn spike_entropy(s: &SpikeTensor) -> f64 {
    binary_entropy(s.rate())
}

/// `CE(P, L) + ((1/t)·Σ H(S_i) − 1)²` on plain values.
pub fn codec_loss(prediction: &Prediction, label: usize, spikes: &[SpikeTensor]) -> Result<f64> {
    if spikes.is_empty() {
        return Err(Error::Degenerate("codec loss needs at least one spike tensor"));
    }
    let z = &prediction.logits;
    if label >= z.len() {
        return Err(Error::OutOfRange {
            what: "class label",
            value: label as f64,
        });
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[label] + entropy_regularizer(spikes))
}

/// `((1/t)·Σ H(S_i) − 1)²`.
pub fn entropy_regularizer(spikes: &[SpikeTensor]) -> f64 {
    let entropies: Vec<f64> = spikes.iter().map(spike_entropy).collect();
    entropy_penalty(&entropies)
}

/// The regularizer for per-step entropies given directly.
pub fn entropy_penalty(entropies: &[f64]) -> f64 {
    let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
    (mean - 1.0) * (mean - 1.0)
}

/// Per-step reconstructor outputs `(F_s^t, F_m^t)` collected so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutputs {
    pub steps: Vec<(Tensor, Tensor)>,
}

impl StepOutputs {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, spikes: Tensor, membrane: Tensor) {
        self.steps.push((spikes, membrane));
    }
}

/// Encoder-side session state.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    drive: Tensor,
    hidden: NeuronState,
    output: NeuronState,
}

/// Receiver-side session state.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorState {
    if_layer: NeuronState,
    ihf_layer: NeuronState,
}

/// Trainable multi-rate codec.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec {
    pub cfg: CodecConfig,
    pub alpha: ParamGroup,
    pub beta: ParamGroup,
    pub gamma: ParamGroup,
    feature_shape: [usize; 3],
}

/// Graph handles produced by one batched transmission.
pub struct Transmission {
    pub reconstructed: Var,
    pub spikes: Vec<Var>,
}

impl Codec {
    pub fn init(cfg: &CodecConfig, feature_shape: [usize; 3]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = feature_shape[0];
        let mut alpha = ParamGroup::new(GroupTag::Alpha);
        init_conv(&mut alpha, "enc1", cfg.encoder_hidden, c, 1, &mut rng);
        init_conv(&mut alpha, "enc2", cfg.payload_channels, cfg.encoder_hidden, 1, &mut rng);
        let mut beta = ParamGroup::new(GroupTag::Beta);
        init_conv(&mut beta, "rec", 2 * cfg.recon_channels, cfg.payload_channels, 1, &mut rng);
        let mut gamma = ParamGroup::new(GroupTag::Gamma);
        init_conv(&mut gamma, "conv1", cfg.converter_hidden, 2 * cfg.recon_channels * cfg.t_max, 1, &mut rng);
        init_conv(&mut gamma, "conv2", c, cfg.converter_hidden, 1, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            alpha,
            beta,
            gamma,
            feature_shape,
        })
    }

    /// Rebuilds a codec around loaded parameter groups.
    pub fn from_groups(
        cfg: &CodecConfig,
        feature_shape: [usize; 3],
        alpha: ParamGroup,
        beta: ParamGroup,
        gamma: ParamGroup,
    ) -> Result<Self> {
        let template = Self::init(cfg, feature_shape)?;
        for (loaded, expected) in [(&alpha, &template.alpha), (&beta, &template.beta), (&gamma, &template.gamma)] {
            for (id, t) in expected.iter() {
                let got = loaded.get(id).ok_or_else(|| {
                    Error::Checkpoint(format!("{} is missing {id}", expected.tag()))
                })?;
                if got.shape() != t.shape() {
                    return Err(Error::shape("codec checkpoint", got.shape(), t.shape()));
                }
            }
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            ..template
        })
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature_shape
    }

    /// Shape of `S_t` for one feature.
    pub fn payload_shape(&self) -> [usize; 3] {
        [self.cfg.payload_channels, self.feature_shape[1], self.feature_shape[2]]
    }

    /// Bits sent per time step.
    pub fn step_bits(&self) -> usize {
        self.payload_shape().iter().product()
    }

    fn check_steps(&self, t: usize) -> Result<()> {
        if t < self.cfg.t0 || t > self.cfg.t_max {
            return Err(Error::OutOfRange {
                what: "time steps",
                value: t as f64,
            });
        }
        Ok(())
    }

    /// Constant drive of the hidden encoder layer for a batch of features.
    pub fn encoder_drive(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let s = g.shape(f);
        if s.len() != 4 || s[1..] != self.feature_shape {
            let mut want = vec![0];
            want.extend_from_slice(&self.feature_shape);
            return Err(Error::shape("encode_step", s, &want));
        }
        conv(g, &self.alpha, "enc1", f)
    }

    /// Output-layer current from hidden-layer spikes.
    pub fn encoder_current(&self, g: &mut Graph, hidden_spikes: Var) -> Result<Var> {
        conv(g, &self.alpha, "enc2", hidden_spikes)
    }

    /// Reconstructor pre-activations for one received payload, split into the
    /// IF and IHF head inputs.
    pub fn reconstructor_input(&self, g: &mut Graph, s_hat: Var) -> Result<(Var, Var)> {
        let h = conv(g, &self.beta, "rec", s_hat)?;
        let c = self.cfg.recon_channels;
        Ok((g.slice_channels(h, 0, c)?, g.slice_channels(h, c, 2 * c)?))
    }

    /// Converter over the first `t` step outputs, zero-padded to `T` steps.
    pub fn converter(&self, g: &mut Graph, outputs: &[(Var, Var)], t: usize) -> Result<Var> {
        self.check_steps(t)?;
        if outputs.len() < t {
            return Err(Error::OutOfRange {
                what: "steps available for conversion",
                value: outputs.len() as f64,
            });
        }
        let parts: Vec<Var> = outputs[..t].iter().flat_map(|&(s, m)| [s, m]).collect();
        let x = g.concat(&parts)?;
        let missing = (self.cfg.t_max - t) * 2 * self.cfg.recon_channels;
        let x = if missing > 0 { g.zero_pad(x, missing)? } else { x };
        let h = conv(g, &self.gamma, "conv1", x)?;
        let h = g.relu(h)?;
        conv(g, &self.gamma, "conv2", h)
    }

    /// Runs `t` encoder/channel/reconstructor steps on a batch of features and
    /// converts. Flips are applied straight-through.
    pub fn transmit<F: FlipSource + ?Sized>(
        &self,
        g: &mut Graph,
        f: Var,
        t: usize,
        flips: &mut F,
    ) -> Result<Transmission> {
        self.check_steps(t)?;
        let (outputs, spikes) = self.run_steps(g, f, t, flips)?;
        let reconstructed = self.converter(g, &outputs, t)?;
        Ok(Transmission {
            reconstructed,
            spikes,
        })
    }

    /// Runs `T` steps once and converts every prefix: entry `i` is `F′` after
    /// `t0 + i` steps.
    pub fn transmit_prefixes<F: FlipSource + ?Sized>(
        &self,
        g: &mut Graph,
        f: Var,
        flips: &mut F,
    ) -> Result<Vec<Var>> {
        let (outputs, _) = self.run_steps(g, f, self.cfg.t_max, flips)?;
        (self.cfg.t0..=self.cfg.t_max)
            .map(|t| self.converter(g, &outputs, t))
            .collect()
    }

    fn run_steps<F: FlipSource + ?Sized>(
        &self,
        g: &mut Graph,
        f: Var,
        t: usize,
        flips: &mut F,
    ) -> Result<(Vec<(Var, Var)>, Vec<Var>)> {
        let drive = self.encoder_drive(g, f)?;
        let mut hidden = GraphNeuron::new(self.cfg.encoder_neuron);
        let mut enc = GraphNeuron::new(self.cfg.encoder_neuron);
        let mut rec_if = GraphNeuron::new(self.cfg.recon_if);
        let mut rec_ihf = GraphNeuron::new(self.cfg.recon_ihf);
        let mut spikes = Vec::with_capacity(t);
        let mut outputs = Vec::with_capacity(t);
        for step in 1..=t {
            let (h, _) = hidden.step(g, drive)?;
            let current = self.encoder_current(g, h)?;
            let (s, _) = enc.step(g, current)?;
            spikes.push(s);
            let mask = flips.mask(step, g.value(s).len());
            let s_hat = if mask.iter().any(|&m| m) {
                let flipped: Vec<f64> = g
                    .value(s)
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { 1.0 - v } else { v })
                    .collect();
                g.straight_through(s, &flipped)?
            } else {
                s
            };
            let (a, b) = self.reconstructor_input(g, s_hat)?;
            let (fs, _) = rec_if.step(g, a)?;
            let (_, fm) = rec_ihf.step(g, b)?;
            outputs.push((fs, fm));
        }
        Ok((outputs, spikes))
    }

    /// Batched inference: `F′` for features `[B, C, H, W]` after `t` steps.
    pub fn reconstruct_batch<F: FlipSource + ?Sized>(
        &self,
        features: &Tensor,
        t: usize,
        flips: &mut F,
    ) -> Result<Tensor> {
        let mut g = Graph::default();
        let f = g.input(features)?;
        let tx = self.transmit(&mut g, f, t, flips)?;
        Ok(g.tensor(tx.reconstructed))
    }

    /// Fresh encoder state for one feature; the hidden drive is computed once.
    pub fn start_encoder(&self, f: &Feature) -> Result<EncoderState> {
        let mut g = Graph::default();
        let fi = g.input(&f.as_batch())?;
        let d = self.encoder_drive(&mut g, fi)?;
        let drive = g.tensor(d);
        let hidden_shape = drive.shape()[1..].to_vec();
        Ok(EncoderState {
            drive: drive.reshaped(&hidden_shape)?,
            hidden: NeuronState::new(&hidden_shape, self.cfg.encoder_neuron, NeuronKind::If)?,
            output: NeuronState::new(&self.payload_shape(), self.cfg.encoder_neuron, NeuronKind::If)?,
        })
    }

    /// One encoder step: emits `S_t` and advances both membranes.
    pub fn encode_step(&self, state: &mut EncoderState) -> Result<SpikeTensor> {
        let h = state.hidden.if_step(&state.drive)?;
        let mut g = Graph::default();
        let mut shape = vec![1];
        shape.extend_from_slice(h.shape());
        let hi = g.input(&h.to_tensor().reshaped(&shape)?)?;
        let c = self.encoder_current(&mut g, hi)?;
        state.output.if_step(&g.tensor(c).reshaped(&self.payload_shape())?)
    }

    pub fn start_reconstructor(&self) -> Result<ReconstructorState> {
        let shape = [self.cfg.recon_channels, self.feature_shape[1], self.feature_shape[2]];
        Ok(ReconstructorState {
            if_layer: NeuronState::new(&shape, self.cfg.recon_if, NeuronKind::If)?,
            ihf_layer: NeuronState::new(&shape, self.cfg.recon_ihf, NeuronKind::Ihf)?,
        })
    }

    /// One reconstructor step on a received payload: returns `(F_s^t, F_m^t)`.
    pub fn reconstruct_step(
        &self,
        s_hat: &SpikeTensor,
        state: &mut ReconstructorState,
    ) -> Result<(Tensor, Tensor)> {
        if s_hat.shape() != self.payload_shape() {
            return Err(Error::shape("reconstruct_step", s_hat.shape(), &self.payload_shape()));
        }
        let mut g = Graph::default();
        let mut shape = vec![1];
        shape.extend_from_slice(s_hat.shape());
        let x = g.input(&s_hat.to_tensor().reshaped(&shape)?)?;
        let (a, b) = self.reconstructor_input(&mut g, x)?;
        let head_shape = state.if_layer.membrane.shape().to_vec();
        let fs = state.if_layer.if_step(&g.tensor(a).reshaped(&head_shape)?)?;
        let (_, fm) = state.ihf_layer.ihf_step(&g.tensor(b).reshaped(&head_shape)?)?;
        Ok((fs.to_tensor(), fm))
    }

    /// `F′` from the first `t` collected step outputs.
    pub fn convert(&self, outputs: &StepOutputs, t: usize) -> Result<Feature> {
        let mut g = Graph::default();
        let mut vars = Vec::with_capacity(t);
        for (fs, fm) in outputs.steps.iter().take(t) {
            let mut shape = vec![1];
            shape.extend_from_slice(fs.shape());
            let a = g.input(&fs.reshaped(&shape)?)?;
            let b = g.input(&fm.reshaped(&shape)?)?;
            vars.push((a, b));
        }
        let y = self.converter(&mut g, &vars, t)?;
        Feature::new(g.tensor(y).reshaped(&self.feature_shape)?)
    }
}

/// Applies one update to `groups` from a scalar loss.
fn update(g: &Graph, loss: Var, opt: &mut Adam, groups: &mut [&mut ParamGroup], stage: &'static str, step: usize) -> Result<f64> {
    let lv = g.value(loss)[0];
    if !lv.is_finite() {
        return Err(Error::Divergence { stage, step, loss: lv });
    }
    g.backward(loss)
        .map_err(divergence(stage, step))?
        .accumulate_into(groups);
    opt.step(groups).map_err(divergence(stage, step))?;
    Ok(lv)
}

/// Builds the codec training loss for one batch of images.
pub fn codec_batch_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    backbone: &Backbone,
    codec: &Codec,
    images: &Tensor,
    labels: &[usize],
    t: usize,
    ber: f64,
    rng: &mut R,
) -> Result<Var> {
    let x = g.input(images)?;
    let f = backbone.edge_forward(g, x)?;
    let tx = codec.transmit(g, f, t, &mut SharedFlips { rng, ber })?;
    let logits = backbone.cloud_forward(g, tx.reconstructed)?;
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let mut total_h: Option<Var> = None;
    for &s in &tx.spikes {
        let q = g.mean(s)?;
        let h = g.binary_entropy(q)?;
        total_h = Some(match total_h {
            Some(acc) => g.add(acc, h)?,
            None => h,
        });
    }
    let total_h = total_h.expect("t >= 1");
    let centered = g.affine(total_h, 1.0 / t as f64, -1.0)?;
    let reg = g.mul(centered, centered)?;
    g.add(ce, reg)
}

/// Which groups a codec training stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecStage {
    /// Backbone frozen; only `alpha`, `beta`, `gamma` move.
    Train,
    /// All five groups move.
    Finetune,
}

/// Trains the codec: every batch samples `t` uniformly from `[t0, T]` and a
/// BER uniformly from the configured range. A fixed-rate config
/// (`t0 == T`) trains a single-rate codec.
pub fn train_codec(
    backbone: &mut Backbone,
    codec: &mut Codec,
    train: &Dataset,
    stage: CodecStage,
) -> Result<Vec<EpochLog>> {
    let (tcfg, name, salt) = match stage {
        CodecStage::Train => (codec.cfg.train, "train-codec", 0xc0dec),
        CodecStage::Finetune => (codec.cfg.finetune, "finetune", 0xf1e7),
    };
    tcfg.validate(name)?;
    codec.cfg.validate()?;
    let mut opt = Adam::new(tcfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(codec.cfg.seed ^ salt);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        let batches = epoch_batches(train.len(), tcfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let (x, labels) = train.gather(idx)?;
            let t = rng.random_range(codec.cfg.t0..=codec.cfg.t_max);
            let ber = if codec.cfg.ber_max > codec.cfg.ber_min {
                rng.random_range(codec.cfg.ber_min..codec.cfg.ber_max)
            } else {
                codec.cfg.ber_min
            };
            let mut g = Graph::default();
            let loss = codec_batch_loss(&mut g, backbone, codec, &x, &labels, t, ber, &mut rng)
                .map_err(divergence(name, step))?;
            total += match stage {
                CodecStage::Train => update(
                    &g,
                    loss,
                    &mut opt,
                    &mut [&mut codec.alpha, &mut codec.beta, &mut codec.gamma],
                    name,
                    step,
                )?,
                CodecStage::Finetune => update(
                    &g,
                    loss,
                    &mut opt,
                    &mut [
                        &mut backbone.mu,
                        &mut backbone.lambda,
                        &mut codec.alpha,
                        &mut codec.beta,
                        &mut codec.gamma,
                    ],
                    name,
                    step,
                )?,
            };
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: total / batches.len() as f64,
        });
    }
    Ok(log)
}

/// Accuracy and mean encoder spike rate of the codec path at `(t, ber)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecEval {
    pub accuracy: f64,
    pub spike_rate: f64,
}

/// Evaluates `f_T(C(R(B(E(f_E(x))))))` on a dataset with channel noise from `rng`.
pub fn evaluate_codec<R: Rng + ?Sized>(
    backbone: &Backbone,
    codec: &Codec,
    data: &Dataset,
    t: usize,
    ber: f64,
    rng: &mut R,
) -> Result<CodecEval> {
    let mut correct = 0;
    let mut ones = 0.0;
    let mut bits = 0.0;
    for start in (0..data.len()).step_by(250) {
        let end = (start + 250).min(data.len());
        let (x, labels) = data.batch(start, end)?;
        let mut g = Graph::default();
        let xi = g.input(&x)?;
        let f = backbone.edge_forward(&mut g, xi)?;
        let tx = codec.transmit(&mut g, f, t, &mut SharedFlips { rng: &mut *rng, ber })?;
        let logits = backbone.cloud_forward(&mut g, tx.reconstructed)?;
        let pred = argmax_rows(g.value(logits), backbone.classes());
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        for s in &tx.spikes {
            ones += g.value(*s).iter().sum::<f64>();
            bits += g.value(*s).len() as f64;
        }
    }
    Ok(CodecEval {
        accuracy: correct as f64 / data.len() as f64,
        spike_rate: ones / bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::channel::substream;

    fn setup() -> (Backbone, Codec) {
        let bb = Backbone::init(&BackboneConfig::default(), 8, 8).unwrap();
        let codec = Codec::init(&CodecConfig::default(), bb.feature_shape()).unwrap();
        (bb, codec)
    }

    fn spikes(ones: usize, len: usize) -> SpikeTensor {
        let bits = (0..len).map(|i| u8::from(i < ones)).collect();
        SpikeTensor::new(vec![len], bits).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(spike_entropy(&spikes(0, 8)), 0.0);
        assert_eq!(spike_entropy(&spikes(8, 8)), 0.0);
        assert_eq!(spike_entropy(&spikes(4, 8)), 1.0);
        assert!((spike_entropy(&spikes(2, 8)) - 0.811_278_124_459_132_8).abs() < 1e-12);
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(entropy_regularizer(&[spikes(4, 8), spikes(16, 32)]), 0.0);
        assert_eq!(entropy_regularizer(&[spikes(0, 8), spikes(8, 8)]), 1.0);
        // Entropies 1.0 and 0.5 are not both reachable from bit counts, so the
        // mixed case is checked on the closed form.
        let mean: f64 = (1.0 + 0.5) / 2.0;
        assert_eq!((mean - 1.0).powi(2), 0.0625);
    }

    #[test]
    fn loss_is_cross_entropy_when_balanced() {
        let p = Prediction {
            logits: vec![0.0, 0.0],
        };
        let l = codec_loss(&p, 1, &[spikes(2, 4)]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(codec_loss(&p, 1, &[]).is_err());
    }

    #[test]
    fn payload_bits() {
        let (_, codec) = setup();
        assert_eq!(codec.payload_shape(), [8, 4, 4]);
        assert_eq!(codec.step_bits(), 128);
    }

    #[test]
    fn config_validation() {
        let cfg = CodecConfig::default();
        assert!(cfg.validate_multi_rate().is_ok());
        assert!(cfg.fixed_rate(3).validate().is_ok());
        assert!(cfg.fixed_rate(3).validate_multi_rate().is_err());
        assert!(CodecConfig { t0: 0, ..cfg.clone() }.validate().is_err());
        assert!(CodecConfig { t0: 9, ..cfg }.validate().is_err());
    }

    #[test]
    fn zero_payload_gives_zero_spike_path() {
        let (_, codec) = setup();
        let mut st = codec.start_reconstructor().unwrap();
        let (fs, fm) = codec
            .reconstruct_step(&SpikeTensor::zeros(&codec.payload_shape()), &mut st)
            .unwrap();
        assert!(fs.values().iter().all(|&v| v == 0.0));
        assert!(fm.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_api_matches_batched_path() {
        let (bb, codec) = setup();
        let f = bb
            .extract_features(&Tensor::full(&[1, 8, 8], 0.7))
            .unwrap();
        let mut enc = codec.start_encoder(&f).unwrap();
        let mut rec = codec.start_reconstructor().unwrap();
        let mut outs = StepOutputs::default();
        for _ in 0..6 {
            let s = codec.encode_step(&mut enc).unwrap();
            let (a, b) = codec.reconstruct_step(&s, &mut rec).unwrap();
            outs.push(a, b);
        }
        let stepwise = codec.convert(&outs, 6).unwrap();
        let batched = codec
            .reconstruct_batch(
                &f.as_batch(),
                6,
                &mut SharedFlips {
                    rng: &mut substream(0, 0, 0),
                    ber: 0.0,
                },
            )
            .unwrap();
        assert_eq!(stepwise.tensor().values(), batched.values());
    }

    #[test]
    fn padding_equals_explicit_zero_steps() {
        let (bb, codec) = setup();
        let f = bb.extract_features(&Tensor::full(&[1, 8, 8], -0.3)).unwrap();
        let mut enc = codec.start_encoder(&f).unwrap();
        let mut rec = codec.start_reconstructor().unwrap();
        let mut outs = StepOutputs::default();
        for _ in 0..5 {
            let s = codec.encode_step(&mut enc).unwrap();
            let (a, b) = codec.reconstruct_step(&s, &mut rec).unwrap();
            outs.push(a, b);
        }
        let padded = codec.convert(&outs, 5).unwrap();
        let mut explicit = outs.clone();
        let head = outs.steps[0].0.shape().to_vec();
        for _ in 5..8 {
            explicit.push(Tensor::zeros(&head), Tensor::zeros(&head));
        }
        let full = codec.convert(&explicit, 8).unwrap();
        assert_eq!(padded, full);
        assert!(codec.convert(&outs, 3).is_err());
        assert!(codec.convert(&outs, 9).is_err());
    }

    #[test]
    fn sessions_are_deterministic() {
        let (bb, codec) = setup();
        let f = bb.extract_features(&Tensor::full(&[1, 8, 8], 0.2)).unwrap();
        let run = || {
            let mut enc = codec.start_encoder(&f).unwrap();
            (0..8).map(|_| codec.encode_step(&mut enc).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
