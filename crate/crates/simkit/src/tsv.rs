//! Whitespace-separated `frame agent x y` trajectory files.
//!
//! Frame ids advance by a constant stride. When reading, a scene is a
//! maximal run of consecutive frames in which the same set of agents is
//! present; a frame gap or any agent entering or leaving starts a new one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::SimError;
use crate::scene::TrajectoryScene;

/// Frame-id increment between consecutive frames of a written scene.
pub const FRAME_STRIDE: i64 = 10;

/// Renders scenes one after another; each scene starts two strides after
/// the previous one ended so readers see a gap, and agent ids are
/// renumbered to be unique within the file.
pub fn render_tsv(scenes: &[TrajectoryScene]) -> String {
    let mut out = String::new();
    let mut frame_base = 0i64;
    let mut next_id = 1u64;
    for scene in scenes {
        for t in 0..scene.n_frames() {
            let frame = frame_base + t as i64 * FRAME_STRIDE;
            for (a, track) in scene.tracks.iter().enumerate() {
                let [x, y] = track[t];
                writeln!(out, "{frame}\t{}\t{x:.6}\t{y:.6}", next_id + a as u64)
                    .expect("string write");
            }
        }
        frame_base += (scene.n_frames() as i64 + 1) * FRAME_STRIDE;
        next_id += scene.n_agents() as u64;
    }
    out
}

pub fn write_tsv(path: &Path, scenes: &[TrajectoryScene]) -> Result<(), SimError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
    }
    fs::write(path, render_tsv(scenes)).map_err(|e| SimError::io(path, e))
}

/// Reads scenes from `path`, tagging them with `env_id` and timestep `dt`.
pub fn load_tsv(path: &Path, env_id: &str, dt: f64) -> Result<Vec<TrajectoryScene>, SimError> {
    let file = fs::File::open(path).map_err(|e| SimError::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    parse_tsv(file, &path.display().to_string(), stem, env_id, dt)
}

pub fn parse_tsv<R: Read>(
    reader: R,
    source: &str,
    scene_prefix: &str,
    env_id: &str,
    dt: f64,
) -> Result<Vec<TrajectoryScene>, SimError> {
    let parse_err = |line: usize, message: String| SimError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    // frame id -> (agent id -> position), in file order
    let mut frames: Vec<(i64, BTreeMap<u64, [f64; 2]>)> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| SimError::io(source, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize, what: &str| -> Result<f64, SimError> {
            let v: f64 = fields[k].parse().map_err(|_| {
                parse_err(lineno, format!("{what} is not a number: {:?}", fields[k]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(lineno, format!("{what} is not finite")))
            }
        };
        let integral = |v: f64, what: &str| -> Result<f64, SimError> {
            if v.fract() != 0.0 {
                return Err(parse_err(
                    lineno,
                    format!("{what} must be an integer, got {v}"),
                ));
            }
            Ok(v)
        };
        let frame = integral(num(0, "frame id")?, "frame id")? as i64;
        let agent = integral(num(1, "agent id")?, "agent id")?;
        if agent < 0.0 {
            return Err(parse_err(
                lineno,
                format!("agent id must be non-negative, got {agent}"),
            ));
        }
        let pos = [num(2, "x")?, num(3, "y")?];
        match frames.last_mut() {
            Some((last, _)) if frame < *last => {
                return Err(parse_err(
                    lineno,
                    format!("frame {frame} follows frame {last}"),
                ));
            }
            Some((last, agents)) if frame == *last => {
                if agents.insert(agent as u64, pos).is_some() {
                    return Err(parse_err(
                        lineno,
                        format!("agent {agent} repeated in frame {frame}"),
                    ));
                }
            }
            _ => frames.push((frame, BTreeMap::from([(agent as u64, pos)]))),
        }
    }

    let stride = frames
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .min()
        .unwrap_or(1);
    let mut scenes = Vec::new();
    let mut run_start = 0;
    for k in 1..=frames.len() {
        let continues = k < frames.len()
            && frames[k].0 - frames[k - 1].0 == stride
            && frames[k].1.keys().eq(frames[k - 1].1.keys());
        if continues {
            continue;
        }
        let run = &frames[run_start..k];
        let agent_ids: Vec<u64> = run[0].1.keys().copied().collect();
        let tracks = agent_ids
            .iter()
            .map(|id| run.iter().map(|(_, agents)| agents[id]).collect())
            .collect();
        let id = format!("{scene_prefix}-{}", scenes.len());
        scenes.push(TrajectoryScene::new(id, env_id, dt, agent_ids, tracks)?);
        run_start = k;
    }
    Ok(scenes)
}
