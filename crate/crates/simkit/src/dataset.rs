//! Style-parameterized datasets of circle-crossing scenes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::scenario::{generate_circle_crossing, simulate_scene, Placement, SimConfig};
use crate::scene::TrajectoryScene;
use crate::tsv::write_tsv;

/// Attempts per scene before generation gives up.
pub const MAX_SCENE_ATTEMPTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleManifest {
    pub id: String,
    pub kind: String,
    pub separation: f64,
    pub seed: u64,
    pub counts: SplitCounts,
    pub files: Vec<String>,
    pub simulator: SimConfig,
}

pub fn style_env_id(separation: f64) -> String {
    format!("style-{separation}")
}

/// Deterministic, well-mixed seed for one scene attempt.
pub fn scene_seed(seed: u64, split: Split, index: usize, attempt: usize) -> u64 {
    let mut h = seed;
    for part in [split as u64 + 1, index as u64, attempt as u64] {
        h = splitmix64(h ^ splitmix64(part));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One random circle-crossing scene; the same arguments always give the
/// same scene.
pub fn generate_scene(
    separation: f64,
    split: Split,
    index: usize,
    seed: u64,
    config: &SimConfig,
) -> Result<TrajectoryScene, SimError> {
    let env_id = style_env_id(separation);
    let style = config.style(separation);
    let mut last = None;
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let s = scene_seed(seed, split, index, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = rng
            .gen_range(config.n_agents[0]..=config.n_agents[1])
            .max(2);
        let result = generate_circle_crossing(
            n,
            config.circle_radius,
            rng.gen(),
            Placement::Perturbed,
            config,
        )
        .and_then(|agents| {
            let id = format!("{env_id}-{}-{index}", split.name());
            simulate_scene(&agents, &style, rng.gen(), config, id, env_id.clone())
        });
        match result {
            Ok(scene) => return Ok(scene),
            Err(e @ (SimError::InvalidConfig(_) | SimError::InvalidStyle(_))) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(SimError::Rejected {
        split: split.name().to_string(),
        index,
        attempts: MAX_SCENE_ATTEMPTS,
        last: Box::new(last.expect("at least one attempt")),
    })
}

pub fn generate_scenes(
    separation: f64,
    split: Split,
    count: usize,
    seed: u64,
    config: &SimConfig,
) -> Result<Vec<TrajectoryScene>, SimError> {
    (0..count)
        .map(|i| generate_scene(separation, split, i, seed, config))
        .collect()
}

/// Writes `<out_dir>/style-<d>/{train,val,test}.tsv` and `manifest.json`.
pub fn generate_dataset(
    out_dir: &Path,
    separation: f64,
    counts: SplitCounts,
    seed: u64,
    config: &SimConfig,
) -> Result<StyleManifest, SimError> {
    if Split::ALL.iter().any(|&s| counts.get(s) == 0) {
        return Err(SimError::InvalidConfig(
            "every split needs at least one scene".into(),
        ));
    }
    if !(separation >= 0.0) {
        return Err(SimError::InvalidStyle(format!(
            "separation must be >= 0, got {separation}"
        )));
    }
    let env_id = style_env_id(separation);
    let dir = out_dir.join(&env_id);
    let mut files = Vec::new();
    for split in Split::ALL {
        let scenes = generate_scenes(separation, split, counts.get(split), seed, config)?;
        let name = format!("{}.tsv", split.name());
        write_tsv(&dir.join(&name), &scenes)?;
        files.push(name);
    }
    let manifest = StyleManifest {
        id: env_id,
        kind: "style".into(),
        separation,
        seed,
        counts,
        files,
        simulator: config.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| SimError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(env_dir: &Path) -> Result<StyleManifest, SimError> {
    let path: PathBuf = env_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_splits_and_indices() {
        let a = scene_seed(1, Split::Train, 0, 0);
        assert_ne!(a, scene_seed(1, Split::Val, 0, 0));
        assert_ne!(a, scene_seed(1, Split::Train, 1, 0));
        assert_ne!(a, scene_seed(1, Split::Train, 0, 1));
        assert_ne!(a, scene_seed(2, Split::Train, 0, 0));
    }

    #[test]
    fn env_ids() {
        assert_eq!(style_env_id(0.3), "style-0.3");
        assert_eq!(style_env_id(0.0), "style-0");
    }
}
