//! Dense tensors and named parameter groups.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape("Tensor::new", &shape, &[values.len()]));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.values.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: None,
        }
    }

    /// Kaiming-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            shape: shape.to_vec(),
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same values under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values: self.values.clone(),
            grad: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end` along the leading (batch) axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let batch = *self.shape.first().unwrap_or(&0);
        if start > end || end > batch {
            return Err(Error::OutOfRange {
                what: "batch slice end",
                value: end as f64,
            });
        }
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self {
            shape,
            values: self.values[start * row..end * row].to_vec(),
            grad: None,
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or(Error::Degenerate("stack of zero tensors"))?;
        let mut values = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            values.extend_from_slice(&t.values);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }
}

/// The seven parameter groups of the split-classifier system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupTag {
    /// Edge-side feature extractor.
    Mu,
    /// Cloud-side task head.
    Lambda,
    /// Spiking encoder.
    Alpha,
    /// Spiking reconstructor.
    Beta,
    /// Dense converter.
    Gamma,
    /// Prior extractor.
    Omega,
    /// Similarity estimator.
    Phi,
}

impl GroupTag {
    pub const ALL: [GroupTag; 7] = [
        GroupTag::Mu,
        GroupTag::Lambda,
        GroupTag::Alpha,
        GroupTag::Beta,
        GroupTag::Gamma,
        GroupTag::Omega,
        GroupTag::Phi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupTag::Mu => "mu",
            GroupTag::Lambda => "lambda",
            GroupTag::Alpha => "alpha",
            GroupTag::Beta => "beta",
            GroupTag::Gamma => "gamma",
            GroupTag::Omega => "omega",
            GroupTag::Phi => "phi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named map from layer id to parameter tensor, ordered by id.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    tag: GroupTag,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamGroup {
    pub fn new(tag: GroupTag) -> Self {
        Self {
            tag,
            tensors: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn insert(&mut self, id: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(id.into(), tensor);
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.tensors.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// SHA-256 over ids, shapes and little-endian values; used for freeze checks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tag.as_str().as_bytes());
        for (id, t) in &self.tensors {
            h.update(id.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.values() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
