//! Synthetic Gaussian-cluster image classification data.
//!
//! Each class has a fixed random prototype image; samples are the prototype
//! plus i.i.d. Gaussian pixel noise. Everything is keyed by the seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub classes: usize,
    /// Images are `1 × side × side`.
    pub side: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Pixel noise standard deviation around the unit-variance prototypes.
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 8,
            side: 8,
            train_size: 8000,
            test_size: 2000,
            noise: 1.8,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.side == 0 || !self.side.is_multiple_of(2) {
            return Err(Error::Config(
                "data needs at least 2 classes and an even image side".into(),
            ));
        }
        if self.train_size == 0 || self.test_size == 0 || !(self.noise >= 0.0) {
            return Err(Error::Config("data sizes must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// Images `[N, 1, side, side]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// One input with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub input: Tensor,
    pub label: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> Result<LabeledSample> {
        let input = self.images.slice_batch(i, i + 1)?;
        let shape = input.shape()[1..].to_vec();
        Ok(LabeledSample {
            input: input.reshaped(&shape)?,
            label: self.labels[i],
        })
    }

    /// Contiguous batch `start..end`.
    pub fn batch(&self, start: usize, end: usize) -> Result<(Tensor, Vec<usize>)> {
        Ok((
            self.images.slice_batch(start, end)?,
            self.labels[start..end].to_vec(),
        ))
    }

    /// Batch made of the given sample indices.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let row: usize = self.images.shape()[1..].iter().product();
        let mut values = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            values.extend_from_slice(&self.images.values()[i * row..(i + 1) * row]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        Ok((
            Tensor::new(shape, values)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let (images, labels) = self.batch(0, n)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
        })
    }
}

/// Deterministic shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Generates `(train, test)` splits.
pub fn generate(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels = cfg.side * cfg.side;
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..pixels).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut make = |n: usize| -> Result<Dataset> {
        let mut values = Vec::with_capacity(n * pixels);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // Balanced classes in a fixed interleaved order.
            let label = i % cfg.classes;
            labels.push(label);
            for &p in &prototypes[label] {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(p + cfg.noise * z);
            }
        }
        Ok(Dataset {
            images: Tensor::new(vec![n, 1, cfg.side, cfg.side], values)?,
            labels,
            classes: cfg.classes,
        })
    };
    let train = make(cfg.train_size)?;
    let test = make(cfg.test_size)?;
    Ok((train, test))
}
