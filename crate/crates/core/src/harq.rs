//! Similarity-driven HARQ: send the prior, run `t0` steps, then keep adding one
//! step until the estimated similarity exceeds `theta` or `T` is reached.
//!
//! The engine talks to a [`HarqLink`]. [`ModelLink`] drives the trained
//! models one session at a time; [`ScriptedLink`] replays fixed scores and is
//! handy for protocol arithmetic. [`batch_traces`] runs many sessions at once
//! with the same per-session noise as [`ModelLink`], recording the score and
//! prediction at every step so any threshold can be replayed afterwards.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, Feature, Prediction};
use crate::channel::{bsc_transmit, pack, BitStream, ChannelModel, SessionFlips};
use crate::codec::{Codec, EncoderState, ReconstructorState, StepOutputs};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::argmax_rows;
use crate::simnet::{cosine_rows, PriorInfo, SimNet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarqConfig {
    pub t0: usize,
    pub t_max: usize,
    pub theta: f64,
    pub step_bits: usize,
    pub prior_bits: usize,
}

impl HarqConfig {
    /// `theta` may sit on either end of `[-1, 1]` to force ACK or NACK.
    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 || self.t0 >= self.t_max {
            return Err(Error::Config(format!(
                "harq needs 1 <= t0 < T, got t0={} T={}",
                self.t0, self.t_max
            )));
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [-1, 1]", self.theta)));
        }
        if self.step_bits == 0 {
            return Err(Error::Config("step_bits must be positive".into()));
        }
        Ok(())
    }

    /// Bits on the forward link after `t` steps.
    pub fn bits_at(&self, t: usize) -> usize {
        self.prior_bits + t * self.step_bits
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Ack,
    Nack,
    /// `T` reached without an ACK; the last reconstruction is used.
    MaxSteps,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Ack => "ACK",
            Decision::Nack => "NACK",
            Decision::MaxSteps => "max-steps",
        })
    }
}

/// ACK iff the score strictly exceeds `theta`.
pub fn decide(score: f64, theta: f64) -> Decision {
    if score > theta {
        Decision::Ack
    } else {
        Decision::Nack
    }
}

/// One decision round. The first round carries the prior and `t0` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub step: usize,
    pub sent: BitStream,
    pub received: BitStream,
    pub digest: String,
    pub score: f64,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarqSession {
    pub rounds: Vec<Round>,
    pub total_bits: usize,
    pub final_t: usize,
    pub final_prediction: Option<Prediction>,
    pub prior_bits: usize,
    pub step_bits: usize,
}

/// `prior_bits + final_t · step_bits`.
pub fn bandwidth_of(session: &HarqSession) -> usize {
    session.prior_bits + session.final_t * session.step_bits
}

impl HarqSession {
    /// Tab-separated transcript, one round per line after a header.
    pub fn to_log(&self) -> String {
        let mut out = String::from("step\tbits\tscore\tdecision\tdigest\n");
        for r in &self.rounds {
            writeln!(
                out,
                "{}\t{}\t{:.9}\t{}\t{}",
                r.step,
                r.sent.len(),
                r.score,
                r.decision,
                r.digest
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Reconstruction quality seen by the receiver after some step.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub digest: String,
}

/// What the protocol needs from the transmitter, channel and receiver.
pub trait HarqLink {
    /// Sends the prior; returns `(sent, received)`.
    fn send_prior(&mut self) -> Result<(BitStream, BitStream)>;
    /// Runs one more encoder/channel/reconstructor step.
    fn send_step(&mut self) -> Result<(BitStream, BitStream)>;
    /// Scores the reconstruction built from the first `t` steps.
    fn evaluate(&mut self, t: usize) -> Result<Evaluation>;
    /// Task output for the reconstruction after `t` steps, if the link has one.
    fn predict(&mut self, t: usize) -> Result<Option<Prediction>>;
}

/// Runs one full session over `link`.
pub fn run_session<L: HarqLink + ?Sized>(link: &mut L, cfg: &HarqConfig) -> Result<HarqSession> {
    cfg.validate()?;
    let (mut sent, mut received) = link.send_prior()?;
    if sent.len() != cfg.prior_bits {
        return Err(Error::Config(format!(
            "link sent a {}-bit prior, config says {}",
            sent.len(),
            cfg.prior_bits
        )));
    }
    let mut rounds = Vec::new();
    let mut t = 0;
    let mut target = cfg.t0;
    loop {
        while t < target {
            let (s, r) = link.send_step()?;
            if s.len() != cfg.step_bits {
                return Err(Error::Config(format!(
                    "link sent a {}-bit step, config says {}",
                    s.len(),
                    cfg.step_bits
                )));
            }
            sent.extend(&s);
            received.extend(&r);
            t += 1;
        }
        let eval = link.evaluate(t)?;
        let mut decision = decide(eval.score, cfg.theta);
        if decision == Decision::Nack && t == cfg.t_max {
            decision = Decision::MaxSteps;
        }
        rounds.push(Round {
            step: t,
            sent: std::mem::take(&mut sent),
            received: std::mem::take(&mut received),
            digest: eval.digest,
            score: eval.score,
            decision,
        });
        if decision != Decision::Nack {
            break;
        }
        target += 1;
    }
    let final_prediction = link.predict(t)?;
    Ok(HarqSession {
        total_bits: rounds.iter().map(|r| r.sent.len()).sum(),
        rounds,
        final_t: t,
        final_prediction,
        prior_bits: cfg.prior_bits,
        step_bits: cfg.step_bits,
    })
}

/// Link with fixed payload sizes whose score after step `t` is `scores[t - 1]`.
#[derive(Clone, Debug)]
pub struct ScriptedLink {
    pub prior_bits: usize,
    pub step_bits: usize,
    pub scores: Vec<f64>,
}

impl HarqLink for ScriptedLink {
    fn send_prior(&mut self) -> Result<(BitStream, BitStream)> {
        Ok((BitStream::zeros(self.prior_bits), BitStream::zeros(self.prior_bits)))
    }

    fn send_step(&mut self) -> Result<(BitStream, BitStream)> {
        Ok((BitStream::zeros(self.step_bits), BitStream::zeros(self.step_bits)))
    }

    fn evaluate(&mut self, t: usize) -> Result<Evaluation> {
        let score = *self.scores.get(t.wrapping_sub(1)).ok_or(Error::OutOfRange {
            what: "scripted step",
            value: t as f64,
        })?;
        Ok(Evaluation {
            score,
            digest: String::new(),
        })
    }

    fn predict(&mut self, _t: usize) -> Result<Option<Prediction>> {
        Ok(None)
    }
}

/// Read-only handles to the trained models.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub backbone: &'a Backbone,
    pub codec: &'a Codec,
    pub simnet: &'a SimNet,
}

impl Models<'_> {
    /// HARQ settings matching these models.
    pub fn harq_config(&self, theta: f64) -> HarqConfig {
        HarqConfig {
            t0: self.codec.cfg.t0,
            t_max: self.codec.cfg.t_max,
            theta,
            step_bits: self.codec.step_bits(),
            prior_bits: self.simnet.cfg.prior_bits,
        }
    }
}

/// Short SHA-256 digest of a tensor's values.
pub fn digest(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in t.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// One session of the trained models over a BSC. Round `r` of session `s`
/// draws its flips from `channel.substream(s, r)`; round 0 is the prior.
pub struct ModelLink<'a> {
    models: Models<'a>,
    feature: Feature,
    channel: ChannelModel,
    session: u64,
    encoder: EncoderState,
    receiver: ReconstructorState,
    outputs: StepOutputs,
    prior: Option<PriorInfo>,
    reconstructed: Option<(usize, Feature)>,
}

impl<'a> ModelLink<'a> {
    pub fn new(models: Models<'a>, feature: Feature, channel: ChannelModel, session: u64) -> Result<Self> {
        let encoder = models.codec.start_encoder(&feature)?;
        let receiver = models.codec.start_reconstructor()?;
        Ok(Self {
            models,
            feature,
            channel,
            session,
            encoder,
            receiver,
            outputs: StepOutputs::default(),
            prior: None,
            reconstructed: None,
        })
    }

    fn reconstruction(&mut self, t: usize) -> Result<Feature> {
        if let Some((rt, f)) = &self.reconstructed {
            if *rt == t {
                return Ok(f.clone());
            }
        }
        let f = self.models.codec.convert(&self.outputs, t)?;
        self.reconstructed = Some((t, f.clone()));
        Ok(f)
    }
}

impl HarqLink for ModelLink<'_> {
    fn send_prior(&mut self) -> Result<(BitStream, BitStream)> {
        let k = self.models.simnet.extract_prior(&self.feature)?;
        let k_hat = bsc_transmit(&k.0, &self.channel, &mut self.channel.substream(self.session, 0));
        let out = (pack(&k.0), pack(&k_hat));
        self.prior = Some(PriorInfo(k_hat));
        Ok(out)
    }

    fn send_step(&mut self) -> Result<(BitStream, BitStream)> {
        let round = self.outputs.len() as u64 + 1;
        let s = self.models.codec.encode_step(&mut self.encoder)?;
        let s_hat = bsc_transmit(&s, &self.channel, &mut self.channel.substream(self.session, round));
        let (fs, fm) = self.models.codec.reconstruct_step(&s_hat, &mut self.receiver)?;
        self.outputs.push(fs, fm);
        Ok((pack(&s), pack(&s_hat)))
    }

    fn evaluate(&mut self, t: usize) -> Result<Evaluation> {
        let f = self.reconstruction(t)?;
        let prior = self
            .prior
            .as_ref()
            .ok_or(Error::Degenerate("prior not sent before evaluation"))?;
        let score = self
            .models
            .simnet
            .estimate_similarity(&f, prior, self.channel.ber())?
            .value();
        Ok(Evaluation {
            score,
            digest: digest(f.tensor()),
        })
    }

    fn predict(&mut self, t: usize) -> Result<Option<Prediction>> {
        let f = self.reconstruction(t)?;
        Ok(Some(self.models.backbone.execute_task(&f)?))
    }
}

/// Scores and predictions of one session at every step in `[t0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionTrace {
    pub session: u64,
    pub t0: usize,
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    /// True similarity of each reconstruction to the clean feature.
    pub similarities: Vec<f64>,
}

impl SessionTrace {
    /// Step at which a session with threshold `theta` stops.
    pub fn final_t(&self, theta: f64) -> usize {
        let t_max = self.t0 + self.scores.len() - 1;
        self.scores
            .iter()
            .position(|&s| decide(s, theta) == Decision::Ack)
            .map_or(t_max, |i| self.t0 + i)
    }

    pub fn prediction_at(&self, t: usize) -> usize {
        self.predictions[t - self.t0]
    }
}

/// Runs sessions `sessions[i]` for features `[B, …]` in one batch. The result
/// for row `i` equals what [`ModelLink`] yields for that session.
pub fn batch_traces(
    models: Models<'_>,
    features: &Tensor,
    channel: &ChannelModel,
    sessions: &[u64],
) -> Result<Vec<SessionTrace>> {
    let b = features.shape()[0];
    if sessions.len() != b {
        return Err(Error::shape("batch_traces", &[b], &[sessions.len()]));
    }
    let mut flips = SessionFlips {
        channel: *channel,
        sessions: sessions.to_vec(),
    };
    let priors = models.simnet.received_priors(features, &mut flips)?;
    let mut g = Graph::default();
    let f = g.input(features)?;
    let k = g.input(&priors)?;
    let prefixes = models.codec.transmit_prefixes(&mut g, f, &mut flips)?;
    let ber = vec![channel.ber(); b];
    let mut traces: Vec<SessionTrace> = sessions
        .iter()
        .map(|&session| SessionTrace {
            session,
            t0: models.codec.cfg.t0,
            scores: Vec::with_capacity(prefixes.len()),
            predictions: Vec::with_capacity(prefixes.len()),
            similarities: Vec::with_capacity(prefixes.len()),
        })
        .collect();
    let classes = models.backbone.classes();
    let clean = models.backbone.cloud_forward(&mut g, f)?;
    for fr in prefixes {
        let est = models.simnet.estimate_graph(&mut g, fr, k, &ber)?;
        let logits = models.backbone.cloud_forward(&mut g, fr)?;
        let pred = argmax_rows(g.value(logits), classes);
        let sims = cosine_rows(g.value(clean), g.value(logits), classes)?;
        for (((tr, &s), p), sim) in traces.iter_mut().zip(g.value(est)).zip(pred).zip(sims) {
            tr.scores.push(s);
            tr.predictions.push(p);
            tr.similarities.push(sim);
        }
    }
    Ok(traces)
}
