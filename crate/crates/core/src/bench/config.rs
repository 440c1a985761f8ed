//! Sectioned TOML experiment configuration. Every section and key is
//! optional; missing values take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::baseline::{BaselineConfig, FecKind};
use crate::codec::CodecConfig;
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::optim::TrainConfig;
use crate::simnet::SimNetConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub codec: CodecConfig,
    pub simnet: SimNetConfig,
    pub harq: HarqSettings,
    pub baseline: BaselineSettings,
    pub sweep: SweepGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarqSettings {
    /// Explicit thresholds; when empty they are calibrated from the
    /// estimated-similarity distribution at `t0`.
    pub thetas: Vec<f64>,
    pub theta_quantiles: Vec<f64>,
    /// BERs of the gap table; each must be on the sweep grid.
    pub bers: Vec<f64>,
}

impl Default for HarqSettings {
    fn default() -> Self {
        Self {
            thetas: Vec::new(),
            theta_quantiles: vec![0.25, 0.5, 0.75],
            bers: vec![0.0, 0.1, 0.2, 0.3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub steps: usize,
    pub fec: FecKind,
    pub retransmissions: usize,
    pub bers: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let scheme = BaselineConfig::default();
        Self {
            steps: scheme.steps,
            fec: scheme.fec,
            retransmissions: scheme.retransmissions,
            bers: vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            train: TrainConfig {
                epochs: 12,
                batch_size: 32,
                lr: 2e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl BaselineSettings {
    pub fn scheme(&self) -> BaselineConfig {
        BaselineConfig {
            steps: self.steps,
            fec: self.fec,
            retransmissions: self.retransmissions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub bers: Vec<f64>,
    /// Independent channel realisations per cell.
    pub seeds: usize,
    /// Test samples per cell.
    pub samples: usize,
    pub channel_seed: u64,
    /// Rows whose similarity/accuracy correlation is reported.
    pub correlation_bers: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            bers: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            seeds: 5,
            samples: 2000,
            channel_seed: 1000,
            correlation_bers: vec![0.1, 0.2, 0.3],
        }
    }
}

fn on_grid(grid: &[f64], values: &[f64], what: &str) -> Result<()> {
    for v in values {
        if !grid.contains(v) {
            return Err(Error::Config(format!("{what} BER {v} is not on the sweep grid")));
        }
    }
    Ok(())
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let bad = || Error::Config(format!("override `{assignment}` is not of the form section.key=value"));
    let (key, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(bad());
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().ok_or_else(bad)?;
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{assignment}`: `{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(Some(path), &[])
    }

    /// Reads `path` (or starts from defaults) and applies `section.key=value`
    /// overrides. Values are parsed as TOML, falling back to a bare string.
    pub fn load_with(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The full effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.backbone.train.validate("backbone")?;
        self.codec.validate_multi_rate()?;
        self.codec.train.validate("train-codec")?;
        self.codec.finetune.validate("finetune")?;
        self.simnet.validate()?;
        self.baseline.scheme().validate()?;
        self.baseline.train.validate("baseline")?;
        let g = &self.sweep;
        if g.bers.is_empty() || g.seeds == 0 || g.samples == 0 {
            return Err(Error::Config("sweep needs BERs, seeds and samples".into()));
        }
        if g.samples > self.data.test_size {
            return Err(Error::Config(format!(
                "sweep samples {} exceed the test split {}",
                g.samples, self.data.test_size
            )));
        }
        for &p in g.bers.iter().chain(&self.baseline.bers) {
            if !(0.0..=0.5).contains(&p) {
                return Err(Error::Config(format!("BER {p} outside [0, 0.5]")));
            }
        }
        if g.bers.windows(2).any(|w| w[0] >= w[1]) || self.baseline.bers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("BER lists must be strictly increasing".into()));
        }
        on_grid(&g.bers, &self.harq.bers, "harq")?;
        on_grid(&g.bers, &g.correlation_bers, "correlation")?;
        if self.harq.thetas.is_empty() && self.harq.theta_quantiles.is_empty() {
            return Err(Error::Config("harq needs thetas or theta_quantiles".into()));
        }
        if self.harq.thetas.iter().any(|t| !(-1.0..=1.0).contains(t))
            || self.harq.theta_quantiles.iter().any(|q| !(0.0..=1.0).contains(q))
        {
            return Err(Error::Config("thetas must lie in [-1, 1] and quantile levels in [0, 1]".into()));
        }
        Ok(())
    }
}
