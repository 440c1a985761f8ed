//! Toy split classifier: an edge-side feature extractor (`mu`) and a
//! cloud-side task head (`lambda`).
//!
//! ```text
//! x [1,S,S] ─conv3×3─relu─pool2─conv3×3─relu─▶ F [C,S/2,S/2]   (edge)
//! F ─conv3×3─relu─flatten─linear─▶ logits [K]                    (cloud)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{argmax_rows, conv, init_conv, init_linear, linear};
use crate::optim::{Adam, TrainConfig};
use crate::tensor::{GroupTag, ParamGroup, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub seed: u64,
    pub hidden_channels: usize,
    /// Channels of the split-point feature.
    pub feature_channels: usize,
    pub head_channels: usize,
    pub train: TrainConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            hidden_channels: 8,
            feature_channels: 16,
            head_channels: 16,
            train: TrainConfig {
                epochs: 6,
                batch_size: 32,
                lr: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

/// One split-point feature of shape `(C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature(Tensor);

impl Feature {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(Error::shape("Feature", t.shape(), &[0, 0, 0]));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    /// As a batch of one: `[1, C, H, W]`.
    pub fn as_batch(&self) -> Tensor {
        let mut shape = vec![1];
        shape.extend_from_slice(self.0.shape());
        self.0.reshaped(&shape).expect("same element count")
    }
}

/// Task-head output for one feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax_rows(&self.logits, self.logits.len())[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layer {
    Conv(&'static str),
    Relu,
    Pool,
    Flatten,
    Linear(&'static str),
}

const EDGE: [Layer; 5] = [
    Layer::Conv("conv1"),
    Layer::Relu,
    Layer::Pool,
    Layer::Conv("conv2"),
    Layer::Relu,
];
const CLOUD: [Layer; 4] = [
    Layer::Conv("conv3"),
    Layer::Relu,
    Layer::Flatten,
    Layer::Linear("fc"),
];

/// Trained (or training) split classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub mu: ParamGroup,
    pub lambda: ParamGroup,
    input_side: usize,
    feature_channels: usize,
    classes: usize,
}

impl Backbone {
    pub fn init(cfg: &BackboneConfig, input_side: usize, classes: usize) -> Result<Self> {
        if cfg.hidden_channels == 0 || cfg.feature_channels == 0 || cfg.head_channels == 0 {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        if !input_side.is_multiple_of(2) {
            return Err(Error::Config("backbone input side must be even".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut mu = ParamGroup::new(GroupTag::Mu);
        init_conv(&mut mu, "conv1", cfg.hidden_channels, 1, 3, &mut rng);
        init_conv(&mut mu, "conv2", cfg.feature_channels, cfg.hidden_channels, 3, &mut rng);
        let mut lambda = ParamGroup::new(GroupTag::Lambda);
        init_conv(&mut lambda, "conv3", cfg.head_channels, cfg.feature_channels, 3, &mut rng);
        let side = input_side / 2;
        init_linear(&mut lambda, "fc", classes, cfg.head_channels * side * side, &mut rng);
        Ok(Self {
            mu,
            lambda,
            input_side,
            feature_channels: cfg.feature_channels,
            classes,
        })
    }

    /// Rebuilds a backbone around loaded parameter groups.
    pub fn from_groups(mu: ParamGroup, lambda: ParamGroup) -> Result<Self> {
        let w1 = mu
            .get("conv2.w")
            .ok_or_else(|| Error::Checkpoint("mu is missing conv2.w".into()))?;
        let fc = lambda
            .get("fc.w")
            .ok_or_else(|| Error::Checkpoint("lambda is missing fc.w".into()))?;
        let c3 = lambda
            .get("conv3.w")
            .ok_or_else(|| Error::Checkpoint("lambda is missing conv3.w".into()))?;
        let feature_channels = w1.shape()[0];
        let head = c3.shape()[0];
        let plane = fc.shape()[1] / head;
        let side = (plane as f64).sqrt() as usize;
        let classes = fc.shape()[0];
        Ok(Self {
            mu,
            lambda,
            input_side: side * 2,
            feature_channels,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Split-point shape `(C, H, W)`.
    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.input_side / 2;
        [self.feature_channels, s, s]
    }

    fn run(&self, g: &mut Graph, mut x: Var, layers: &[Layer]) -> Result<Var> {
        for layer in layers {
            x = match *layer {
                Layer::Conv(id) => {
                    let group = if EDGE.contains(layer) { &self.mu } else { &self.lambda };
                    conv(g, group, id, x)?
                }
                Layer::Relu => g.relu(x)?,
                Layer::Pool => g.avg_pool2(x)?,
                Layer::Flatten => g.flatten(x)?,
                Layer::Linear(id) => linear(g, &self.lambda, id, x)?,
            };
        }
        Ok(x)
    }

    /// `f_E` on a batch `[B, 1, S, S]`.
    pub fn edge_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != self.input_side || s[3] != self.input_side {
            return Err(Error::shape(
                "extract_features",
                s,
                &[0, 1, self.input_side, self.input_side],
            ));
        }
        self.run(g, x, &EDGE)
    }

    /// `f_T` on a batch of features `[B, C, H, W]`.
    pub fn cloud_forward(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let s = g.shape(f);
        let [c, h, w] = self.feature_shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::shape("execute_task", s, &[0, c, h, w]));
        }
        self.run(g, f, &CLOUD)
    }

    /// Unsplit forward pass through every layer in one sweep.
    pub fn full_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let all: Vec<Layer> = EDGE.iter().chain(CLOUD.iter()).copied().collect();
        self.run(g, x, &all)
    }

    /// Features for a batch of images `[B, 1, S, S]`.
    pub fn extract_features_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::default();
        let xi = g.input(x)?;
        let f = self.edge_forward(&mut g, xi)?;
        Ok(g.tensor(f))
    }

    /// Logits for a batch of features.
    pub fn execute_task_batch(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::default();
        let fi = g.input(f)?;
        let y = self.cloud_forward(&mut g, fi)?;
        Ok(g.tensor(y))
    }

    /// `F = f_E(x)` for one image `[1, S, S]`.
    pub fn extract_features(&self, x: &Tensor) -> Result<Feature> {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        let f = self.extract_features_batch(&x.reshaped(&shape)?)?;
        Feature::new(f.reshaped(&self.feature_shape())?)
    }

    /// `P = f_T(F)`.
    pub fn execute_task(&self, f: &Feature) -> Result<Prediction> {
        let y = self.execute_task_batch(&f.as_batch())?;
        Ok(Prediction {
            logits: y.into_values(),
        })
    }

    /// Clean (no channel) accuracy on a dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let mut correct = 0;
        for start in (0..data.len()).step_by(500) {
            let end = (start + 500).min(data.len());
            let (x, labels) = data.batch(start, end)?;
            let mut g = Graph::default();
            let xi = g.input(&x)?;
            let y = self.full_forward(&mut g, xi)?;
            let pred = argmax_rows(g.value(y), self.classes);
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

pub(crate) fn divergence(stage: &'static str, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence {
            stage,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains `mu` and `lambda` with cross-entropy.
pub fn train_backbone(train: &Dataset, cfg: &BackboneConfig) -> Result<(Backbone, Vec<EpochLog>)> {
    cfg.train.validate("backbone")?;
    let side = train.images.shape()[2];
    let mut model = Backbone::init(cfg, side, train.classes)?;
    let mut opt = Adam::new(cfg.train.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.train.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(train.len(), cfg.train.batch_size, &mut rng);
        for idx in &batches {
            let (x, labels) = train.gather(idx)?;
            let mut g = Graph::default();
            let loss = (|| {
                let xi = g.input(&x)?;
                let y = model.full_forward(&mut g, xi)?;
                g.softmax_cross_entropy(y, &labels)
            })()
            .map_err(divergence("backbone", step))?;
            let lv = g.value(loss)[0];
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    stage: "backbone",
                    step,
                    loss: lv,
                });
            }
            total += lv;
            g.backward(loss)
                .map_err(divergence("backbone", step))?
                .accumulate_into(&mut [&mut model.mu, &mut model.lambda]);
            opt.step(&mut [&mut model.mu, &mut model.lambda])
                .map_err(divergence("backbone", step))?;
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: total / batches.len() as f64,
        });
    }
    Ok((model, log))
}
