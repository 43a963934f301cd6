//! Checkpoint directories: the model groups plus `meta.json`, and the run
//! manifest written next to them by `train`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use forecast::trainer::{EpochRecord, StageOutcome};
use forecast::{ExperimentConfig, ModularModel};
use serde::{Deserialize, Serialize};

use crate::{Mode, Suite};

/// What a checkpoint is, so later verbs know how to evaluate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub suite: Suite,
    pub mode: Mode,
    /// Method name used in report rows.
    pub method: String,
    pub seed: u64,
    pub k_batches: Option<usize>,
    pub config_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: String,
    pub config: &'a ExperimentConfig,
    pub config_hash: String,
    pub dataset_hashes: BTreeMap<String, String>,
    pub stages: Vec<StageSummary>,
    pub trace_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn save_checkpoint(dir: &Path, model: &ModularModel, meta: &Meta) -> anyhow::Result<()> {
    model.save(dir)?;
    write_json(&dir.join("meta.json"), meta)
}

pub fn load_checkpoint(dir: &Path) -> anyhow::Result<(ModularModel, Meta)> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(forecast::Error::MissingArtifact(format!("{} missing", path.display())).into());
    }
    let meta: Meta = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| forecast::Error::Config(format!("{}: {e}", path.display())))?;
    Ok((ModularModel::load(dir)?, meta))
}

pub fn stage_summaries(stages: &[StageOutcome]) -> Vec<StageSummary> {
    stages
        .iter()
        .map(|s| StageSummary {
            stage: s.stage.name().to_string(),
            epochs: s.trace.len(),
            best_epoch: s.best_epoch,
            best_val: s.best_val,
        })
        .collect()
}

/// One row per epoch: stage, epoch, train loss, val loss, val ADE.
pub fn write_trace(path: &Path, stages: &[StageOutcome]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(w, "stage,epoch,train_loss,val_loss,val_ade")?;
    for EpochRecord {
        stage,
        epoch,
        train_loss,
        val_loss,
        val_ade,
    } in stages.iter().flat_map(|s| &s.trace)
    {
        let ade = val_ade.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{epoch},{train_loss},{val_loss},{ade}", stage.name())?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}
