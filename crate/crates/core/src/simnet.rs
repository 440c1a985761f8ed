//! Semantic similarity: the ground-truth cosine metric, the edge-side prior
//! extractor (`omega`) and the cloud-side estimator (`phi`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{divergence, Backbone, EpochLog, Feature};
use crate::channel::{FlipSource, SharedFlips};
use crate::codec::Codec;
use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{conv, init_conv, init_linear, linear};
use crate::neuron::SpikeTensor;
use crate::optim::{Adam, TrainConfig};
use crate::tensor::{GroupTag, ParamGroup, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimNetConfig {
    pub seed: u64,
    /// Prior bits; the prior has shape `(prior_bits, 1, 1)`.
    pub prior_bits: usize,
    pub extractor_hidden: usize,
    pub estimator_hidden: usize,
    pub ber_min: f64,
    pub ber_max: f64,
    pub train: TrainConfig,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            seed: 31,
            prior_bits: 16,
            extractor_hidden: 8,
            estimator_hidden: 64,
            ber_min: 0.0,
            ber_max: 0.3,
            train: TrainConfig {
                epochs: 40,
                batch_size: 32,
                lr: 2e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl SimNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior_bits == 0 || self.extractor_hidden == 0 || self.estimator_hidden == 0 {
            return Err(Error::Config("simnet sizes must be positive".into()));
        }
        if !(0.0 <= self.ber_min && self.ber_min <= self.ber_max && self.ber_max <= 0.5) {
            return Err(Error::Config(format!(
                "simnet BER range [{}, {}] must lie in [0, 0.5]",
                self.ber_min, self.ber_max
            )));
        }
        self.train.validate("train-simnet")
    }
}

/// Binary prior `K` (or its received copy `K̂`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorInfo(pub SpikeTensor);

impl PriorInfo {
    pub fn bits(&self) -> &SpikeTensor {
        &self.0
    }
}

/// A similarity in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                what: "similarity",
                value,
            });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `u·v / (|u||v|)`, clipped into `[-1, 1]` against rounding.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", &[u.len()], &[v.len()]));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("zero-norm logit vector"));
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Row-wise cosine of two `[B, K]` logit blocks.
pub fn cosine_rows(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    a.chunks(k).zip(b.chunks(k)).map(|(u, v)| cosine(u, v)).collect()
}

/// Cosine of the task-head outputs for `f` and `f_rec`.
pub fn true_similarity(f: &Feature, f_rec: &Feature, backbone: &Backbone) -> Result<SimilarityScore> {
    let u = backbone.execute_task(f)?;
    let v = backbone.execute_task(f_rec)?;
    SimilarityScore::new(cosine(&u.logits, &v.logits)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimNet {
    pub cfg: SimNetConfig,
    pub omega: ParamGroup,
    pub phi: ParamGroup,
    feature_shape: [usize; 3],
}

impl SimNet {
    pub fn init(cfg: &SimNetConfig, feature_shape: [usize; 3]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut omega = ParamGroup::new(GroupTag::Omega);
        init_conv(&mut omega, "conv1", cfg.extractor_hidden, feature_shape[0], 1, &mut rng);
        init_conv(&mut omega, "conv2", cfg.prior_bits, cfg.extractor_hidden, 1, &mut rng);
        let mut phi = ParamGroup::new(GroupTag::Phi);
        let inputs = feature_shape.iter().product::<usize>() + cfg.prior_bits + 1;
        init_linear(&mut phi, "fc1", cfg.estimator_hidden, inputs, &mut rng);
        init_linear(&mut phi, "fc2", 1, cfg.estimator_hidden, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            omega,
            phi,
            feature_shape,
        })
    }

    pub fn from_groups(
        cfg: &SimNetConfig,
        feature_shape: [usize; 3],
        omega: ParamGroup,
        phi: ParamGroup,
    ) -> Result<Self> {
        let template = Self::init(cfg, feature_shape)?;
        for (loaded, expected) in [(&omega, &template.omega), (&phi, &template.phi)] {
            for (id, t) in expected.iter() {
                let got = loaded.get(id).ok_or_else(|| {
                    Error::Checkpoint(format!("{} is missing {id}", expected.tag()))
                })?;
                if got.shape() != t.shape() {
                    return Err(Error::shape("simnet checkpoint", got.shape(), t.shape()));
                }
            }
        }
        Ok(Self {
            omega,
            phi,
            ..template
        })
    }

    pub fn prior_shape(&self) -> [usize; 3] {
        [self.cfg.prior_bits, 1, 1]
    }

    /// Quantised prior `[B, prior_bits, 1, 1]` for features `[B, C, H, W]`.
    pub fn prior_graph(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let pre = self.prior_logits(g, f)?;
        g.quantize(pre)
    }

    fn prior_logits(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let s = g.shape(f);
        if s.len() != 4 || s[1..] != self.feature_shape {
            let mut want = vec![0];
            want.extend_from_slice(&self.feature_shape);
            return Err(Error::shape("extract_prior", s, &want));
        }
        let h = conv(g, &self.omega, "conv1", f)?;
        let h = g.relu(h)?;
        let h = conv(g, &self.omega, "conv2", h)?;
        g.global_avg_pool(h)
    }

    /// Estimated similarity `[B, 1]` from `F′ [B, C, H, W]`, `K̂ [B, bits, 1, 1]`
    /// and one BER per row.
    pub fn estimate_graph(&self, g: &mut Graph, f_rec: Var, prior: Var, ber: &[f64]) -> Result<Var> {
        let y = self.estimate_raw(g, f_rec, prior, ber)?;
        g.clamp(y, -1.0, 1.0)
    }

    /// Unclamped estimator output, used as the regression target during training.
    pub fn estimate_raw(&self, g: &mut Graph, f_rec: Var, prior: Var, ber: &[f64]) -> Result<Var> {
        let b = g.shape(f_rec)[0];
        if ber.len() != b {
            return Err(Error::shape("estimate_similarity", &[b], &[ber.len()]));
        }
        let x = g.flatten(f_rec)?;
        let k = g.flatten(prior)?;
        let p = g.input(&Tensor::new(vec![b, 1], ber.to_vec())?)?;
        let h = g.concat(&[x, k, p])?;
        let h = linear(g, &self.phi, "fc1", h)?;
        let h = g.relu(h)?;
        linear(g, &self.phi, "fc2", h)
    }

    pub fn extract_prior(&self, f: &Feature) -> Result<PriorInfo> {
        let mut g = Graph::default();
        let fi = g.input(&f.as_batch())?;
        let k = self.prior_graph(&mut g, fi)?;
        let t = g.tensor(k).reshaped(&self.prior_shape())?;
        Ok(PriorInfo(SpikeTensor::from_tensor(&t)?))
    }

    /// Pre-quantisation prior activations, exposed for inspection.
    pub fn prior_activations(&self, f: &Feature) -> Result<Tensor> {
        let mut g = Graph::default();
        let fi = g.input(&f.as_batch())?;
        let k = self.prior_logits(&mut g, fi)?;
        g.tensor(k).reshaped(&self.prior_shape())
    }

    pub fn estimate_similarity(&self, f_rec: &Feature, prior: &PriorInfo, ber: f64) -> Result<SimilarityScore> {
        if prior.0.shape() != self.prior_shape() {
            return Err(Error::shape("estimate_similarity", prior.0.shape(), &self.prior_shape()));
        }
        let mut g = Graph::default();
        let fi = g.input(&f_rec.as_batch())?;
        let mut kshape = vec![1];
        kshape.extend_from_slice(&self.prior_shape());
        let ki = g.input(&prior.0.to_tensor().reshaped(&kshape)?)?;
        let y = self.estimate_graph(&mut g, fi, ki, &[ber])?;
        SimilarityScore::new(g.value(y)[0])
    }

    /// Received priors `[B, bits, 1, 1]` for features `[B, …]`.
    pub fn received_priors<F: FlipSource + ?Sized>(&self, features: &Tensor, flips: &mut F) -> Result<Tensor> {
        let mut g = Graph::default();
        let f = g.input(features)?;
        let k = self.prior_graph(&mut g, f)?;
        let k_hat = noisy_prior(&mut g, k, flips)?;
        Ok(g.tensor(k_hat))
    }

    /// Batched estimates for reconstructions `[B, …]` given received priors.
    pub fn estimate_batch(&self, reconstructed: &Tensor, priors: &Tensor, ber: f64) -> Result<Vec<f64>> {
        let mut g = Graph::default();
        let fr = g.input(reconstructed)?;
        let k = g.input(priors)?;
        let b = reconstructed.shape()[0];
        let y = self.estimate_graph(&mut g, fr, k, &vec![ber; b])?;
        Ok(g.value(y).to_vec())
    }
}

/// Sends a batched prior over the channel as step 0 of `flips`.
pub fn noisy_prior<F: FlipSource + ?Sized>(g: &mut Graph, k: Var, flips: &mut F) -> Result<Var> {
    let mask = flips.mask(0, g.value(k).len());
    if !mask.iter().any(|&m| m) {
        return Ok(k);
    }
    let flipped: Vec<f64> = g
        .value(k)
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { 1.0 - v } else { v })
        .collect();
    g.straight_through(k, &flipped)
}

/// One labelled SimNet batch: features, reconstructions and true similarities.
pub struct SimilarityBatch {
    pub features: Tensor,
    pub reconstructed: Tensor,
    pub ber: f64,
    pub labels: Vec<f64>,
}

/// Runs the frozen codec at `(t, ber)` and labels every sample with the
/// cosine of the task-head outputs.
pub fn similarity_batch<R: Rng + ?Sized>(
    backbone: &Backbone,
    codec: &Codec,
    images: &Tensor,
    t: usize,
    ber: f64,
    rng: &mut R,
) -> Result<SimilarityBatch> {
    let features = backbone.extract_features_batch(images)?;
    let reconstructed = codec.reconstruct_batch(&features, t, &mut SharedFlips { rng: &mut *rng, ber })?;
    let clean = backbone.execute_task_batch(&features)?;
    let noisy = backbone.execute_task_batch(&reconstructed)?;
    let labels = cosine_rows(clean.values(), noisy.values(), backbone.classes())?;
    Ok(SimilarityBatch {
        features,
        reconstructed,
        ber,
        labels,
    })
}

/// Trains `omega` and `phi` on squared error against true similarities; the
/// backbone and codec are read-only.
pub fn train_simnet(
    backbone: &Backbone,
    codec: &Codec,
    simnet: &mut SimNet,
    train: &Dataset,
) -> Result<Vec<EpochLog>> {
    simnet.cfg.validate()?;
    let tcfg = simnet.cfg.train;
    let mut opt = Adam::new(tcfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(simnet.cfg.seed ^ 0x51a);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        let batches = epoch_batches(train.len(), tcfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let (x, _) = train.gather(idx)?;
            let t = rng.random_range(codec.cfg.t0..=codec.cfg.t_max);
            let ber = if simnet.cfg.ber_max > simnet.cfg.ber_min {
                rng.random_range(simnet.cfg.ber_min..simnet.cfg.ber_max)
            } else {
                simnet.cfg.ber_min
            };
            let batch = similarity_batch(backbone, codec, &x, t, ber, &mut rng)?;
            let mut g = Graph::default();
            let f = g.input(&batch.features)?;
            let k = simnet.prior_graph(&mut g, f)?;
            let k_hat = noisy_prior(&mut g, k, &mut SharedFlips { rng: &mut rng, ber })?;
            let fr = g.input(&batch.reconstructed)?;
            let est = simnet.estimate_raw(&mut g, fr, k_hat, &vec![ber; idx.len()])?;
            let target = g.input(&Tensor::new(vec![idx.len(), 1], batch.labels)?)?;
            let loss = g.squared_error(est, target)?;
            let lv = g.value(loss)[0];
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    stage: "train-simnet",
                    step,
                    loss: lv,
                });
            }
            let mut groups = [&mut simnet.omega, &mut simnet.phi];
            g.backward(loss)
                .map_err(divergence("train-simnet", step))?
                .accumulate_into(&mut groups);
            opt.step(&mut groups).map_err(divergence("train-simnet", step))?;
            total += lv;
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: total / batches.len() as f64,
        });
    }
    Ok(log)
}

/// Held-out `(estimates, true similarities)` over random `(t, ber)` draws.
pub fn simnet_holdout<R: Rng + ?Sized>(
    backbone: &Backbone,
    codec: &Codec,
    simnet: &SimNet,
    data: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut est = Vec::with_capacity(data.len());
    let mut truth = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(data.len());
        let (x, _) = data.batch(start, end)?;
        let t = rng.random_range(codec.cfg.t0..=codec.cfg.t_max);
        let ber = rng.random_range(simnet.cfg.ber_min..=simnet.cfg.ber_max);
        let batch = similarity_batch(backbone, codec, &x, t, ber, rng)?;
        let priors = simnet.received_priors(&batch.features, &mut SharedFlips { rng: &mut *rng, ber })?;
        est.extend(simnet.estimate_batch(&batch.reconstructed, &priors, ber)?);
        truth.extend(batch.labels);
    }
    Ok((est, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), -1.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_range_is_enforced() {
        assert!(SimilarityScore::new(1.0).is_ok());
        assert!(SimilarityScore::new(1.0001).is_err());
    }

    #[test]
    fn prior_signs() {
        let bb = Backbone::init(&BackboneConfig::default(), 8, 8).unwrap();
        let mut sn = SimNet::init(&SimNetConfig::default(), bb.feature_shape()).unwrap();
        let f = bb.extract_features(&Tensor::full(&[1, 8, 8], 0.5)).unwrap();
        for bias in [1e3, -1e3] {
            let b = sn.omega.get_mut("conv2.b").unwrap();
            b.values_mut().iter_mut().for_each(|v| *v = bias);
            let k = sn.extract_prior(&f).unwrap();
            assert_eq!(k.bits().shape(), &[16, 1, 1]);
            let want = u8::from(bias > 0.0);
            assert!(k.bits().bits().iter().all(|&b| b == want));
        }
    }

    #[test]
    fn estimate_is_clamped_and_deterministic() {
        let bb = Backbone::init(&BackboneConfig::default(), 8, 8).unwrap();
        let mut sn = SimNet::init(&SimNetConfig::default(), bb.feature_shape()).unwrap();
        let f = bb.extract_features(&Tensor::full(&[1, 8, 8], 0.5)).unwrap();
        let k = sn.extract_prior(&f).unwrap();
        let a = sn.estimate_similarity(&f, &k, 0.1).unwrap();
        assert_eq!(a, sn.estimate_similarity(&f, &k, 0.1).unwrap());
        sn.phi.get_mut("fc2.b").unwrap().values_mut()[0] = 50.0;
        assert_eq!(sn.estimate_similarity(&f, &k, 0.1).unwrap().value(), 1.0);
        let wrong = PriorInfo(SpikeTensor::zeros(&[4, 1, 1]));
        assert!(sn.estimate_similarity(&f, &wrong, 0.1).is_err());
    }
}
