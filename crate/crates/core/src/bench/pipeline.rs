//! Staged training with a checkpoint after every stage:
//! backbone → codec (backbone frozen) → joint finetune → SimNet (all else
//! frozen), plus the fixed-rate baseline codec on the finetuned backbone.

use std::path::PathBuf;

use serde::Serialize;

use crate::backbone::{train_backbone, Backbone, EpochLog};
use crate::checkpoint::{self, config_hash};
use crate::codec::{train_codec, Codec, CodecConfig, CodecStage};
use crate::data::{generate, Dataset};
use crate::error::Result;
use crate::harq::Models;
use crate::simnet::{train_simnet, SimNet};
use crate::tensor::GroupTag;

use super::config::ExperimentConfig;

pub const BACKBONE: &str = "backbone.ckpt";
pub const CODEC: &str = "codec.ckpt";
pub const FINETUNE: &str = "finetune.ckpt";
pub const SIMNET: &str = "simnet.ckpt";
pub const BASELINE: &str = "baseline.ckpt";

/// Every trained model of one experiment.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub backbone: Backbone,
    pub codec: Codec,
    pub simnet: SimNet,
    pub baseline_codec: Codec,
}

impl TrainedModels {
    pub fn models(&self) -> Models<'_> {
        Models {
            backbone: &self.backbone,
            codec: &self.codec,
            simnet: &self.simnet,
        }
    }
}

/// A configuration bound to a directory of checkpoints and reports.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
}

fn section<T: Serialize>(name: &str, value: &T) -> String {
    format!("[{name}]\n{}", toml::to_string(value).expect("config serialises"))
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, dir: dir.into() })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        generate(&self.cfg.data)
    }

    /// Hash of every config section a stage's output depends on.
    pub fn stage_hash(&self, stage: &str) -> u64 {
        let c = &self.cfg;
        let mut text = section("data", &c.data) + &section("backbone", &c.backbone);
        if stage != BACKBONE {
            text += &section("codec", &c.codec);
        }
        if stage == FINETUNE || stage == SIMNET || stage == BASELINE {
            text += "finetune\n";
        }
        if stage == SIMNET {
            text += &section("simnet", &c.simnet);
        }
        if stage == BASELINE {
            text += &section("baseline", &c.baseline);
        }
        config_hash(&text)
    }

    fn load(&self, file: &'static str) -> Result<checkpoint::Checkpoint> {
        checkpoint::load(&self.path(file), file.trim_end_matches(".ckpt"), self.stage_hash(file))
    }

    pub fn baseline_codec_config(&self) -> CodecConfig {
        CodecConfig {
            ber_min: 0.0,
            ber_max: 0.0,
            train: self.cfg.baseline.train,
            ..self.cfg.codec.fixed_rate(self.cfg.baseline.steps)
        }
    }

    pub fn train_backbone(&self) -> Result<Vec<EpochLog>> {
        let (train, _) = self.datasets()?;
        let (bb, log) = train_backbone(&train, &self.cfg.backbone)?;
        checkpoint::save(&self.path(BACKBONE), self.stage_hash(BACKBONE), &[&bb.mu, &bb.lambda])?;
        Ok(log)
    }

    pub fn load_backbone(&self) -> Result<Backbone> {
        let mut ck = self.load(BACKBONE)?;
        Backbone::from_groups(ck.take(GroupTag::Mu)?, ck.take(GroupTag::Lambda)?)
    }

    pub fn train_codec(&self) -> Result<Vec<EpochLog>> {
        let mut bb = self.load_backbone()?;
        let (train, _) = self.datasets()?;
        let mut codec = Codec::init(&self.cfg.codec, bb.feature_shape())?;
        let log = train_codec(&mut bb, &mut codec, &train, CodecStage::Train)?;
        checkpoint::save(
            &self.path(CODEC),
            self.stage_hash(CODEC),
            &[&codec.alpha, &codec.beta, &codec.gamma],
        )?;
        Ok(log)
    }

    fn codec_from(&self, ck: &mut checkpoint::Checkpoint, cfg: &CodecConfig, bb: &Backbone) -> Result<Codec> {
        Codec::from_groups(
            cfg,
            bb.feature_shape(),
            ck.take(GroupTag::Alpha)?,
            ck.take(GroupTag::Beta)?,
            ck.take(GroupTag::Gamma)?,
        )
    }

    /// Backbone and codec after the codec stage, before finetuning.
    pub fn load_codec_stage(&self) -> Result<(Backbone, Codec)> {
        let bb = self.load_backbone()?;
        let mut ck = self.load(CODEC)?;
        let codec = self.codec_from(&mut ck, &self.cfg.codec, &bb)?;
        Ok((bb, codec))
    }

    pub fn finetune(&self) -> Result<Vec<EpochLog>> {
        let (mut bb, mut codec) = self.load_codec_stage()?;
        let (train, _) = self.datasets()?;
        let log = train_codec(&mut bb, &mut codec, &train, CodecStage::Finetune)?;
        checkpoint::save(
            &self.path(FINETUNE),
            self.stage_hash(FINETUNE),
            &[&bb.mu, &bb.lambda, &codec.alpha, &codec.beta, &codec.gamma],
        )?;
        Ok(log)
    }

    /// Jointly finetuned backbone and codec.
    pub fn load_finetuned(&self) -> Result<(Backbone, Codec)> {
        let mut ck = self.load(FINETUNE)?;
        let bb = Backbone::from_groups(ck.take(GroupTag::Mu)?, ck.take(GroupTag::Lambda)?)?;
        let codec = self.codec_from(&mut ck, &self.cfg.codec, &bb)?;
        Ok((bb, codec))
    }

    pub fn train_simnet(&self) -> Result<Vec<EpochLog>> {
        let (bb, codec) = self.load_finetuned()?;
        let (train, _) = self.datasets()?;
        let mut simnet = SimNet::init(&self.cfg.simnet, bb.feature_shape())?;
        let log = train_simnet(&bb, &codec, &mut simnet, &train)?;
        checkpoint::save(&self.path(SIMNET), self.stage_hash(SIMNET), &[&simnet.omega, &simnet.phi])?;
        Ok(log)
    }

    pub fn load_simnet(&self, bb: &Backbone) -> Result<SimNet> {
        let mut ck = self.load(SIMNET)?;
        SimNet::from_groups(&self.cfg.simnet, bb.feature_shape(), ck.take(GroupTag::Omega)?, ck.take(GroupTag::Phi)?)
    }

    /// Fixed-rate codec for the separate-coding baseline, trained noise-free
    /// on the frozen finetuned backbone.
    pub fn train_baseline_codec(&self) -> Result<Vec<EpochLog>> {
        let (mut bb, _) = self.load_finetuned()?;
        let (train, _) = self.datasets()?;
        let mut codec = Codec::init(&self.baseline_codec_config(), bb.feature_shape())?;
        let log = train_codec(&mut bb, &mut codec, &train, CodecStage::Train)?;
        checkpoint::save(
            &self.path(BASELINE),
            self.stage_hash(BASELINE),
            &[&codec.alpha, &codec.beta, &codec.gamma],
        )?;
        Ok(log)
    }

    pub fn load_baseline_codec(&self, bb: &Backbone) -> Result<Codec> {
        let mut ck = self.load(BASELINE)?;
        self.codec_from(&mut ck, &self.baseline_codec_config(), bb)
    }

    /// Finetuned backbone and codec with the trained SimNet.
    pub fn load_semantic(&self) -> Result<(Backbone, Codec, SimNet)> {
        let (backbone, codec) = self.load_finetuned()?;
        let simnet = self.load_simnet(&backbone)?;
        Ok((backbone, codec, simnet))
    }

    pub fn load_models(&self) -> Result<TrainedModels> {
        let (backbone, codec, simnet) = self.load_semantic()?;
        let baseline_codec = self.load_baseline_codec(&backbone)?;
        Ok(TrainedModels {
            backbone,
            codec,
            simnet,
            baseline_codec,
        })
    }

    /// Runs every training stage in order.
    pub fn pipeline(&self) -> Result<TrainedModels> {
        self.train_backbone()?;
        self.train_codec()?;
        self.finetune()?;
        self.train_simnet()?;
        self.train_baseline_codec()?;
        self.load_models()
    }

    /// True when `file` exists and was written for the current config.
    pub fn is_current(&self, file: &'static str) -> bool {
        self.load(file).is_ok()
    }

    /// Like [`Workspace::pipeline`] but skips stages whose checkpoint is
    /// current, along with everything before them being current too.
    pub fn resume(&self) -> Result<TrainedModels> {
        let mut stale = false;
        let stages: [(&'static str, fn(&Self) -> Result<Vec<EpochLog>>); 5] = [
            (BACKBONE, Self::train_backbone),
            (CODEC, Self::train_codec),
            (FINETUNE, Self::finetune),
            (SIMNET, Self::train_simnet),
            (BASELINE, Self::train_baseline_codec),
        ];
        for (file, run) in stages {
            if stale || !self.is_current(file) {
                run(self)?;
                stale = file != SIMNET;
            }
        }
        self.load_models()
    }
}
