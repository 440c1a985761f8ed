//! Adam optimiser over [`ParamGroup`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamGroup;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Epoch/batch schedule plus Adam settings for one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 10,
            batch_size: 64,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self, stage: &str) -> Result<()> {
        if self.batch_size == 0 || !(self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "{stage}: batch_size must be positive and lr non-negative"
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for every tensor of the groups it steps.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to every tensor in `groups`
    /// using its accumulated `grad`, then zeroes the gradients. Tensors
    /// without a gradient buffer are left untouched.
    pub fn step(&mut self, groups: &mut [&mut ParamGroup]) -> Result<()> {
        for group in groups.iter() {
            for (id, t) in group.iter() {
                if let Some(g) = t.grad() {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!(
                            "gradient of {}.{}",
                            group.tag(),
                            id
                        )));
                    }
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for group in groups.iter_mut() {
            let tag = group.tag();
            for (id, t) in group.iter_mut() {
                let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                    continue;
                };
                let key = format!("{tag}.{id}");
                let (m, v) = self
                    .moments
                    .entry(key)
                    .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                for (((p, gi), mi), vi) in t.values_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
                t.zero_grad();
            }
        }
        Ok(())
    }
}

/// One Adam update with explicit gradients, for callers that do not keep
/// gradients on the tensors.
pub fn adam_step(
    params: &mut ParamGroup,
    grads: &BTreeMap<String, Vec<f64>>,
    optimizer: &mut Adam,
) -> Result<()> {
    for (id, g) in grads {
        let t = params
            .get_mut(id)
            .ok_or_else(|| Error::Config(format!("no parameter `{id}` for gradient")))?;
        if t.len() != g.len() {
            return Err(Error::shape("adam_step", t.shape(), &[g.len()]));
        }
        t.grad_mut().copy_from_slice(g);
    }
    optimizer.step(&mut [params])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{GroupTag, Tensor};

    fn scalar_group(v: f64) -> ParamGroup {
        let mut g = ParamGroup::new(GroupTag::Alpha);
        g.insert("w", Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_group(1.0);
        let mut opt = Adam::new(AdamConfig::default());
        let grads = BTreeMap::from([("w".to_string(), vec![0.0])]);
        adam_step(&mut p, &grads, &mut opt).unwrap();
        assert_eq!(p.get("w").unwrap().values(), &[1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = -lr / (1 + eps).
        let mut p = scalar_group(1.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let grads = BTreeMap::from([("w".to_string(), vec![1.0])]);
        adam_step(&mut p, &grads, &mut opt).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().values()[0] - expected).abs() < 1e-15);
        assert!((p.get("w").unwrap().values()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = scalar_group(1.0);
        let mut opt = Adam::new(AdamConfig::default());
        let grads = BTreeMap::from([("w".to_string(), vec![f64::NAN])]);
        let err = adam_step(&mut p, &grads, &mut opt).unwrap_err();
        assert!(err.to_string().contains("alpha.w"), "{err}");
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = scalar_group(0.3);
            let mut opt = Adam::new(AdamConfig::default());
            for i in 0..20 {
                let grads = BTreeMap::from([("w".to_string(), vec![(i as f64).sin()])]);
                adam_step(&mut p, &grads, &mut opt).unwrap();
            }
            p.get("w").unwrap().values()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
