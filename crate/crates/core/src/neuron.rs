//! Integrate-Fire (IF) and Integrate-and-Hybrid-Fire (IHF) neurons.
//!
//! Every time step runs three serial phases:
//!
//! * charge: `m ← m + I`
//! * fire: `s = 1` iff `m > V_th` (ties do not fire)
//! * reset: hard `m ← (1 − s)·m + s·V_reset`, or soft `m ← m − s·V_th`
//!
//! IHF neurons share these dynamics and additionally expose the post-reset
//! membrane as a real-valued output.
//!
//! [`NeuronState`] is the plain vectorised layer used at inference time and
//! as the reference for property tests. [`GraphNeuron`] runs the same
//! arithmetic on a [`Graph`] so it can be trained with the surrogate
//! gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{surrogate_derivative, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronKind {
    If,
    Ihf,
}

/// Firing and reset parameters shared by a layer of neurons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    pub v_th: f64,
    pub v_reset: f64,
    pub reset: ResetMode,
    /// Steepness `k` of the sigmoid surrogate `σ(k(m − V_th))`.
    pub surrogate_slope: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            v_th: 1.0,
            v_reset: 0.0,
            reset: ResetMode::Soft,
            surrogate_slope: 4.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > 0.0) || !self.v_th.is_finite() {
            return Err(Error::Config(format!("v_th must be positive, got {}", self.v_th)));
        }
        if !self.v_reset.is_finite() || !(self.surrogate_slope > 0.0) {
            return Err(Error::Config("v_reset must be finite and surrogate_slope positive".into()));
        }
        Ok(())
    }
}

/// Binary tensor carried over the channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    shape: Vec<usize>,
    bits: Vec<u8>,
}

impl SpikeTensor {
    pub fn new(shape: Vec<usize>, bits: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(Error::shape("SpikeTensor::new", &shape, &[bits.len()]));
        }
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::OutOfRange {
                what: "spike bit",
                value: b as f64,
            });
        }
        Ok(Self { shape, bits })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            bits: vec![0; shape.iter().product()],
        }
    }

    /// Thresholds a real tensor whose entries are exactly 0 or 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let bits = t
            .values()
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::OutOfRange {
                        what: "spike value",
                        value: v,
                    })
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self {
            shape: t.shape().to_vec(),
            bits,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("spike shape is consistent")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fraction of ones.
    pub fn rate(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.bits.len() as f64
    }
}

/// Membrane potentials of one layer plus its firing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub membrane: Tensor,
    pub params: NeuronParams,
    pub kind: NeuronKind,
}

impl NeuronState {
    pub fn new(shape: &[usize], params: NeuronParams, kind: NeuronKind) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            membrane: Tensor::zeros(shape),
            params,
            kind,
        })
    }

    /// Zeroes the membrane for a fresh session.
    pub fn reset_session(&mut self) {
        self.membrane.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    fn charge_fire_reset(&mut self, input: &Tensor) -> Result<SpikeTensor> {
        if input.shape() != self.membrane.shape() {
            return Err(Error::shape("neuron step", self.membrane.shape(), input.shape()));
        }
        let NeuronParams {
            v_th,
            v_reset,
            reset,
            ..
        } = self.params;
        let mut bits = Vec::with_capacity(input.len());
        for (m, &i) in self.membrane.values_mut().iter_mut().zip(input.values()) {
            *m += i;
            let s = if *m > v_th { 1.0 } else { 0.0 };
            *m = match reset {
                ResetMode::Hard => *m * (1.0 - s) + s * v_reset,
                ResetMode::Soft => *m - s * v_th,
            };
            bits.push(s as u8);
        }
        if !self.membrane.is_finite() {
            return Err(Error::NonFinite("membrane potential".into()));
        }
        SpikeTensor::new(input.shape().to_vec(), bits)
    }

    /// One IF time step.
    pub fn if_step(&mut self, input: &Tensor) -> Result<SpikeTensor> {
        if self.kind != NeuronKind::If {
            return Err(Error::Config("if_step called on an IHF layer".into()));
        }
        self.charge_fire_reset(input)
    }

    /// One IHF time step; also returns the post-reset membrane.
    pub fn ihf_step(&mut self, input: &Tensor) -> Result<(SpikeTensor, Tensor)> {
        if self.kind != NeuronKind::Ihf {
            return Err(Error::Config("ihf_step called on an IF layer".into()));
        }
        let s = self.charge_fire_reset(input)?;
        Ok((s, self.membrane.clone()))
    }
}

/// Backward pass of the firing step: `dσ(k(m − V_th))/dm` per element.
pub fn fire_surrogate_backward(pre_activation: &Tensor, params: &NeuronParams) -> Tensor {
    let values = pre_activation
        .values()
        .iter()
        .map(|&m| surrogate_derivative(m - params.v_th, params.surrogate_slope))
        .collect();
    Tensor::new(pre_activation.shape().to_vec(), values).expect("same shape")
}

/// A neuron layer whose membrane lives on a [`Graph`], for training.
#[derive(Clone, Debug)]
pub struct GraphNeuron {
    params: NeuronParams,
    membrane: Option<Var>,
}

impl GraphNeuron {
    pub fn new(params: NeuronParams) -> Self {
        Self {
            params,
            membrane: None,
        }
    }

    /// Runs one step; returns `(spikes, post-reset membrane)`.
    pub fn step(&mut self, g: &mut Graph, input: Var) -> Result<(Var, Var)> {
        let m = match self.membrane {
            Some(prev) => g.add(prev, input)?,
            None => input,
        };
        let NeuronParams {
            v_th,
            v_reset,
            reset,
            surrogate_slope,
        } = self.params;
        let s = g.fire(m, v_th, surrogate_slope)?;
        let m_next = match reset {
            ResetMode::Soft => {
                let drop = g.affine(s, v_th, 0.0)?;
                g.sub(m, drop)?
            }
            ResetMode::Hard => {
                let keep = g.affine(s, -1.0, 1.0)?;
                let kept = g.mul(m, keep)?;
                let set = g.affine(s, v_reset, 0.0)?;
                g.add(kept, set)?
            }
        };
        self.membrane = Some(m_next);
        Ok((s, m_next))
    }
}
