//! Experiment configuration: one JSON document covering simulation,
//! training, adaptation, refinement and the three suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simkit::{SimConfig, SplitCounts};

use crate::adapt::{AdaptConfig, RefineConfig};
use crate::error::{Error, Result};
use crate::trainer::{StageEpochs, TrainConfig};

/// Data and schedule size. `Full` uses the largest scene counts;
/// `Desk` shrinks the scene counts; `Quick` also shortens the schedules so
/// the whole acceptance run fits in minutes on one core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Quick,
    #[default]
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!(
                "unknown scale {other:?} (quick, desk, full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleSuiteConfig {
    pub train_styles: Vec<f64>,
    pub test_styles: Vec<f64>,
    pub counts: SplitCounts,
    /// Penalty weight of the invariant backbone.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpuriousSuiteConfig {
    /// Separation distance of the synthetic stand-in for each subset.
    pub separation: f64,
    pub counts: SplitCounts,
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    /// Leading epochs trained without the penalty.
    pub warmup: usize,
    /// Directory with `<subset>/{train,val,test}.tsv` recordings; synthetic
    /// stand-ins are simulated when absent.
    pub data_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferSuiteConfig {
    pub target_style: f64,
    pub shots: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub seeds: Vec<u64>,
    /// Seed of the simulated datasets; model seeds come from `seeds`.
    pub data_seed: u64,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub refine: RefineConfig,
    pub style: StyleSuiteConfig,
    pub spurious: SpuriousSuiteConfig,
    pub transfer: TransferSuiteConfig,
}

fn counts(train: usize, val: usize, test: usize) -> SplitCounts {
    SplitCounts { train, val, test }
}

impl Default for StyleSuiteConfig {
    fn default() -> Self {
        Self {
            train_styles: vec![0.1, 0.3, 0.5],
            test_styles: vec![0.4, 0.6, 0.7, 0.8],
            counts: counts(2000, 500, 1000),
            lambda: 1.0,
        }
    }
}

impl Default for SpuriousSuiteConfig {
    fn default() -> Self {
        Self {
            separation: 0.3,
            counts: counts(2000, 500, 1000),
            lambdas: vec![100.0],
            epochs: 400,
            warmup: 150,
            data_dir: None,
        }
    }
}

impl Default for TransferSuiteConfig {
    fn default() -> Self {
        Self {
            target_style: 0.6,
            shots: (1..=6).collect(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_scale(Scale::Desk)
    }
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let mut cfg = Self {
            scale,
            seeds: (0..5).collect(),
            data_seed: 2024,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            refine: RefineConfig::default(),
            style: StyleSuiteConfig::default(),
            spurious: SpuriousSuiteConfig::default(),
            transfer: TransferSuiteConfig::default(),
        };
        match scale {
            Scale::Full => {
                cfg.style.counts = counts(10_000, 3_000, 5_000);
            }
            Scale::Desk => {}
            Scale::Quick => {
                cfg.style.counts = counts(400, 100, 200);
                cfg.spurious.counts = counts(300, 80, 150);
                cfg.spurious.epochs = 60;
                cfg.spurious.warmup = 20;
                cfg.train.epochs = StageEpochs {
                    backbone: 40,
                    contrastive: 20,
                    modulator: 10,
                    joint: 40,
                };
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.style.train_styles.len() < 2 {
            return Err(Error::Config(
                "the style suite needs at least two training styles".into(),
            ));
        }
        if self.spurious.warmup > self.spurious.epochs {
            return Err(Error::Config(
                "spurious warm-up exceeds the epoch count".into(),
            ));
        }
        if self
            .transfer
            .shots
            .iter()
            .any(|k| !(1..=crate::adapt::MAX_SHOTS).contains(k))
        {
            return Err(Error::Config("transfer shots must lie in 1..=6".into()));
        }
        Ok(())
    }

    /// Reads a config file. Fields it leaves out come from the preset of its
    /// `scale` field, or of `fallback` when that is absent too.
    pub fn load(path: &Path, fallback: Scale) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "config {} missing",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text, fallback)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a possibly partial config over its scale preset.
    pub fn from_json(text: &str, fallback: Scale) -> std::result::Result<Self, serde_json::Error> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let scale = match user.get("scale") {
            Some(v) => Scale::deserialize(v)?,
            None => fallback,
        };
        let mut merged = serde_json::to_value(Self::for_scale(scale))?;
        overlay(&mut merged, user);
        serde_json::from_value(merged)
    }

    pub fn hash(&self) -> Result<String> {
        crate::report::json_hash(self)
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
