//! Sliding-window instances, environment tags, feature layouts and the
//! curvature-driven spurious channel.

use std::collections::BTreeMap;

use diffcore::Tensor64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use simkit::{load_tsv, parse_tsv, render_tsv, write_tsv, TrajectoryScene};

pub const OBS_LEN: usize = 8;
pub const PRED_LEN: usize = 12;
pub const WINDOW_LEN: usize = OBS_LEN + PRED_LEN;
pub const MAX_NEIGHBORS: usize = 5;
/// Temporal offset of the curvature channel.
pub const CURVATURE_LAG: usize = 8;
/// Width of [`style_features`]: primary trajectory plus the nearest
/// neighbor's trajectory relative to it, both over the full window.
pub const STYLE_DIM: usize = 4 * WINDOW_LEN;

/// Training subsets of the leave-one-out spurious protocol and their
/// spurious strengths.
pub const SPURIOUS_TRAIN: [(&str, f64); 4] = [
    ("hotel", 1.0),
    ("univ", 2.0),
    ("zara1", 4.0),
    ("zara2", 8.0),
];
pub const SPURIOUS_TEST_SUBSET: &str = "eth";
pub const SPURIOUS_TEST_ALPHAS: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
pub const SUBSETS: [&str; 5] = ["eth", "hotel", "univ", "zara1", "zara2"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvKind {
    Spurious { alpha: f64 },
    Style { separation: f64 },
    Real { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentTag {
    pub id: String,
    #[serde(flatten)]
    pub kind: EnvKind,
}

impl EnvironmentTag {
    pub fn spurious(subset: &str, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spurious strength must be > 0, got {alpha}"
            )));
        }
        Ok(Self {
            id: spurious_env_id(subset, alpha),
            kind: EnvKind::Spurious { alpha },
        })
    }

    pub fn style(separation: f64) -> Result<Self> {
        if !(separation >= 0.0 && separation.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "separation must be >= 0, got {separation}"
            )));
        }
        Ok(Self {
            id: simkit::style_env_id(separation),
            kind: EnvKind::Style { separation },
        })
    }
}

pub fn spurious_env_id(subset: &str, alpha: f64) -> String {
    format!("{subset}-a{alpha}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub agent_id: u64,
    /// Positions in the primary's normalized frame.
    pub past: [[f64; 2]; OBS_LEN],
    pub future: [[f64; 2]; PRED_LEN],
}

/// One forecasting example. Coordinates are translated so the primary
/// agent's last observed position is the origin; `origin` undoes that.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceWindow {
    pub env_id: String,
    pub scene_id: String,
    pub agent_id: u64,
    /// First frame of the window within its scene.
    pub start: usize,
    pub origin: [f64; 2],
    pub past: [[f64; 2]; OBS_LEN],
    pub future: [[f64; 2]; PRED_LEN],
    pub sigma: Option<[f64; OBS_LEN]>,
    /// At most [`MAX_NEIGHBORS`], nearest first at the last observed frame.
    pub neighbors: Vec<Neighbor>,
}

impl InstanceWindow {
    pub fn future_flat(&self) -> Vec<f64> {
        self.future.iter().flatten().copied().collect()
    }

    /// Future in world coordinates.
    pub fn future_world(&self) -> Vec<[f64; 2]> {
        self.future
            .iter()
            .map(|p| [p[0] + self.origin[0], p[1] + self.origin[1]])
            .collect()
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Every stride-1 window of [`WINDOW_LEN`] frames for every agent of every
/// scene, scenes in order. Short scenes contribute nothing.
pub fn window_scenes(scenes: &[TrajectoryScene]) -> Vec<InstanceWindow> {
    scenes.iter().flat_map(window_scene).collect()
}

pub fn window_scene(scene: &TrajectoryScene) -> Vec<InstanceWindow> {
    let frames = scene.n_frames();
    if frames < WINDOW_LEN {
        return Vec::new();
    }
    let mut out = Vec::new();
    for start in 0..=frames - WINDOW_LEN {
        let last_obs = start + OBS_LEN - 1;
        for a in 0..scene.n_agents() {
            let origin = scene.tracks[a][last_obs];
            let rel = |track: &[[f64; 2]], t: usize| sub(track[start + t], origin);
            let mut others: Vec<(f64, usize)> = (0..scene.n_agents())
                .filter(|&b| b != a)
                .map(|b| {
                    (
                        simkit::scene::distance(scene.tracks[b][last_obs], origin),
                        b,
                    )
                })
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let neighbors = others
                .iter()
                .take(MAX_NEIGHBORS)
                .map(|&(_, b)| Neighbor {
                    agent_id: scene.agent_ids[b],
                    past: std::array::from_fn(|t| rel(&scene.tracks[b], t)),
                    future: std::array::from_fn(|t| rel(&scene.tracks[b], OBS_LEN + t)),
                })
                .collect();
            out.push(InstanceWindow {
                env_id: scene.env_id.clone(),
                scene_id: scene.scene_id.clone(),
                agent_id: scene.agent_ids[a],
                start,
                origin,
                past: std::array::from_fn(|t| rel(&scene.tracks[a], t)),
                future: std::array::from_fn(|t| rel(&scene.tracks[a], OBS_LEN + t)),
                sigma: None,
                neighbors,
            });
        }
    }
    out
}

/// `σ_t = α (γ_t + 1)` with `γ_t` the squared change of the one-step
/// velocity over `lag` frames. The last `lag + 1` frames, where `γ_t`
/// would need positions past the end, reuse the last defined value.
pub fn curvature_sigma(trajectory: &[[f64; 2]], alpha: f64, lag: usize) -> Result<Vec<f64>> {
    if trajectory.len() < lag + 2 {
        return Err(Error::InvalidInput(format!(
            "curvature needs at least {} frames, got {}",
            lag + 2,
            trajectory.len()
        )));
    }
    let vel = |t: usize| sub(trajectory[t + 1], trajectory[t]);
    let last_valid = trajectory.len() - lag - 2;
    Ok((0..trajectory.len())
        .map(|t| {
            let t = t.min(last_valid);
            let (v0, v1) = (vel(t), vel(t + lag));
            let gamma = (v1[0] - v0[0]).powi(2) + (v1[1] - v0[1]).powi(2);
            alpha * (gamma + 1.0)
        })
        .collect())
}

/// Adds the spurious channel of strength `alpha` to every window and tags
/// it with the `(subset, alpha)` environment.
pub fn add_spurious_channel(
    windows: &mut [InstanceWindow],
    subset: &str,
    alpha: f64,
) -> Result<()> {
    let tag = EnvironmentTag::spurious(subset, alpha)?;
    for w in windows.iter_mut() {
        let track: Vec<[f64; 2]> = w.past.iter().chain(w.future.iter()).copied().collect();
        let sigma = curvature_sigma(&track, alpha, CURVATURE_LAG)?;
        w.sigma = Some(std::array::from_fn(|t| sigma[t]));
        w.env_id = tag.id.clone();
    }
    Ok(())
}

/// Windows of each named subset, one tagged copy per `(subset, alpha)`
/// assignment, in assignment order.
pub fn make_spurious_environments(
    subsets: &BTreeMap<String, Vec<TrajectoryScene>>,
    assignments: &[(&str, f64)],
) -> Result<Vec<(EnvironmentTag, Vec<InstanceWindow>)>> {
    assignments
        .iter()
        .map(|&(subset, alpha)| {
            let scenes = subsets
                .get(subset)
                .ok_or_else(|| Error::InvalidInput(format!("unknown subset {subset:?}")))?;
            let mut windows = window_scenes(scenes);
            add_spurious_channel(&mut windows, subset, alpha)?;
            Ok((EnvironmentTag::spurious(subset, alpha)?, windows))
        })
        .collect()
}

/// Width of [`invariant_features`].
pub fn invariant_dim(with_sigma: bool) -> usize {
    2 * OBS_LEN + if with_sigma { OBS_LEN } else { 0 } + MAX_NEIGHBORS * (2 * OBS_LEN + 1)
}

/// Observed-only input of the invariant encoder: primary past, the
/// spurious channel when present, then per neighbor slot its past relative
/// to the primary at the same frame (zeros when absent), then the presence
/// mask.
pub fn invariant_features(w: &InstanceWindow) -> Vec<f64> {
    let mut out = Vec::with_capacity(invariant_dim(w.sigma.is_some()));
    out.extend(w.past.iter().flatten());
    if let Some(s) = &w.sigma {
        out.extend(s);
    }
    for k in 0..MAX_NEIGHBORS {
        match w.neighbors.get(k) {
            Some(n) => {
                for t in 0..OBS_LEN {
                    out.extend(sub(n.past[t], w.past[t]));
                }
            }
            None => out.extend([0.0; 2 * OBS_LEN]),
        }
    }
    out.extend((0..MAX_NEIGHBORS).map(|k| if k < w.neighbors.len() { 1.0 } else { 0.0 }));
    out
}

/// Fully observed view for the style encoder: the primary's 20 positions
/// followed by the nearest neighbor's 20 positions relative to the primary
/// (zeros without neighbors).
pub fn style_features(w: &InstanceWindow) -> Vec<f64> {
    let primary: Vec<[f64; 2]> = w.past.iter().chain(w.future.iter()).copied().collect();
    let mut out = Vec::with_capacity(STYLE_DIM);
    out.extend(primary.iter().flatten());
    match w.neighbors.first() {
        Some(n) => {
            for (t, p) in n.past.iter().chain(n.future.iter()).enumerate() {
                out.extend(sub(*p, primary[t]));
            }
        }
        None => out.extend([0.0; 2 * WINDOW_LEN]),
    }
    out
}

/// Future of the nearest neighbor extrapolated at its last observed
/// velocity, in the primary's frame; zeros without neighbors.
pub fn neighbor_future_cv(w: &InstanceWindow) -> Option<[[f64; 2]; PRED_LEN]> {
    let n = w.neighbors.first()?;
    let last = n.past[OBS_LEN - 1];
    let v = sub(last, n.past[OBS_LEN - 2]);
    Some(std::array::from_fn(|t| {
        let k = (t + 1) as f64;
        [last[0] + k * v[0], last[1] + k * v[1]]
    }))
}

/// Row-stacked tensors for a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// `n x invariant_dim`
    pub inputs: Tensor64,
    /// `n x (2 * PRED_LEN)`
    pub targets: Tensor64,
    /// `n x STYLE_DIM`; empty columns for data without style views.
    pub style: Tensor64,
}

impl Split {
    pub fn from_windows(windows: &[InstanceWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::InvalidInput("no windows".into()));
        }
        let with_sigma = windows[0].sigma.is_some();
        if windows.iter().any(|w| w.sigma.is_some() != with_sigma) {
            return Err(Error::InvalidInput(
                "mixed windows with and without the spurious channel".into(),
            ));
        }
        let rows = |f: &dyn Fn(&InstanceWindow) -> Vec<f64>| -> Result<Tensor64> {
            Ok(Tensor64::from_rows(
                &windows.iter().map(f).collect::<Vec<_>>(),
            )?)
        };
        Ok(Self {
            inputs: rows(&invariant_features)?,
            targets: rows(&|w| w.future_flat())?,
            style: rows(&style_features)?,
        })
    }

    pub fn from_tensors(inputs: Tensor64, targets: Tensor64, style: Tensor64) -> Result<Self> {
        let n = inputs.rows();
        if targets.rows() != n || style.rows() != n || n == 0 {
            return Err(Error::InvalidInput(format!(
                "split row counts differ or are zero: {} / {} / {}",
                n,
                targets.rows(),
                style.rows()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            style,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-wise concatenation of splits with equal widths.
    pub fn concat(parts: &[&Split]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("no splits to concatenate".into()))?;
        let stack = |get: &dyn Fn(&Split) -> &Tensor64| -> Result<Tensor64> {
            let cols = get(first).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = get(p);
                if t.cols() != cols {
                    return Err(Error::InvalidInput(format!(
                        "cannot stack widths {cols} and {}",
                        t.cols()
                    )));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Ok(Tensor64::from_vec(rows, cols, data)?)
        };
        Self::from_tensors(
            stack(&|s| &s.inputs)?,
            stack(&|s| &s.targets)?,
            stack(&|s| &s.style)?,
        )
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_rows(idx)?,
            targets: self.targets.select_rows(idx)?,
            style: self.style.select_rows(idx)?,
        })
    }
}

/// One training environment: its id and data splits.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvData {
    pub id: String,
    pub train: Split,
    pub val: Split,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(tracks: Vec<Vec<[f64; 2]>>) -> TrajectoryScene {
        let ids = (0..tracks.len() as u64).collect();
        TrajectoryScene::new("s", "e", 0.4, ids, tracks).unwrap()
    }

    fn line(n: usize, start: [f64; 2], step: [f64; 2]) -> Vec<[f64; 2]> {
        (0..n)
            .map(|t| [start[0] + step[0] * t as f64, start[1] + step[1] * t as f64])
            .collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(
            window_scenes(&[scene(vec![line(20, [0.0, 0.0], [1.0, 0.0])])]).len(),
            1
        );
        let s = scene(vec![
            line(25, [0.0, 0.0], [1.0, 0.0]),
            line(25, [0.0, 3.0], [1.0, 0.0]),
        ]);
        assert_eq!(window_scenes(&[s]).len(), 12);
        assert!(window_scenes(&[scene(vec![line(19, [0.0, 0.0], [1.0, 0.0])])]).is_empty());
    }

    #[test]
    fn windows_are_origin_anchored() {
        let w = &window_scenes(&[scene(vec![line(20, [2.0, 1.0], [0.5, 0.0])])])[0];
        assert_eq!(w.past[OBS_LEN - 1], [0.0, 0.0]);
        assert_eq!(w.origin, [2.0 + 0.5 * 7.0, 1.0]);
        assert_eq!(w.future[0], [0.5, 0.0]);
        assert_eq!(w.future_world()[0], [6.0, 1.0]);
    }

    #[test]
    fn two_agents_see_each_other() {
        let s = scene(vec![
            line(20, [0.0, 0.0], [1.0, 0.0]),
            line(20, [0.0, 2.0], [1.0, 0.0]),
        ]);
        let ws = window_scenes(&[s]);
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0].neighbors.len(), 1);
        assert_eq!(ws[0].neighbors[0].agent_id, 1);
        assert_eq!(ws[0].neighbors[0].past[0], [-7.0, 2.0]);
        assert_eq!(ws[1].neighbors[0].agent_id, 0);
    }

    #[test]
    fn straight_line_sigma_is_alpha() {
        let s = curvature_sigma(&line(20, [1.0, -2.0], [0.3, 0.4]), 2.0, 8).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn right_angle_turn() {
        // unit steps along x, then along y: velocity change (-1, 1)
        let mut track = line(9, [0.0, 0.0], [1.0, 0.0]);
        for k in 1..=10 {
            track.push([8.0, k as f64]);
        }
        let s = curvature_sigma(&track, 1.5, 8).unwrap();
        assert_eq!(s[0], 1.5 * 3.0);
        // velocities at t and t + 8 both along y near the end
        assert_eq!(s[track.len() - 1], 1.5);
    }

    #[test]
    fn sigma_substitution() {
        // gamma = 0.25 from a velocity change of (0.5, 0)
        let mut track = line(9, [0.0, 0.0], [1.0, 0.0]);
        track.push([9.5, 0.0]);
        let s = curvature_sigma(&track, 2.0, 8).unwrap();
        assert_eq!(s[0], 2.5);
    }

    #[test]
    fn sigma_needs_length() {
        assert!(curvature_sigma(&line(9, [0.0, 0.0], [1.0, 0.0]), 1.0, 8).is_err());
        assert!(curvature_sigma(&line(10, [0.0, 0.0], [1.0, 0.0]), 1.0, 8).is_ok());
    }

    #[test]
    fn spurious_tags_and_guards() {
        let mut subsets = BTreeMap::new();
        subsets.insert(
            "hotel".to_string(),
            vec![scene(vec![line(20, [0.0, 0.0], [1.0, 0.0])])],
        );
        let envs = make_spurious_environments(&subsets, &[("hotel", 1.0), ("hotel", 4.0)]).unwrap();
        assert_eq!(envs[0].0.id, "hotel-a1");
        assert_eq!(envs[1].1[0].env_id, "hotel-a4");
        assert_eq!(envs[1].1[0].sigma.unwrap()[0], 4.0);
        assert!(make_spurious_environments(&subsets, &[("eth", 1.0)]).is_err());
        assert!(make_spurious_environments(&subsets, &[("hotel", 0.0)]).is_err());
    }

    #[test]
    fn feature_widths() {
        let s = scene(vec![
            line(20, [0.0, 0.0], [1.0, 0.0]),
            line(20, [0.0, 2.0], [1.0, 0.0]),
        ]);
        let mut ws = window_scenes(&[s]);
        assert_eq!(invariant_features(&ws[0]).len(), invariant_dim(false));
        assert_eq!(invariant_dim(false), 101);
        add_spurious_channel(&mut ws, "univ", 2.0).unwrap();
        let f = invariant_features(&ws[0]);
        assert_eq!(f.len(), invariant_dim(true));
        assert_eq!(&f[f.len() - MAX_NEIGHBORS..], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let st = style_features(&ws[0]);
        assert_eq!(st.len(), STYLE_DIM);
        assert_eq!(&st[40..42], &[0.0, 2.0]);
    }

    #[test]
    fn cv_extrapolation() {
        let s = scene(vec![
            line(20, [0.0, 0.0], [1.0, 0.0]),
            line(20, [0.0, 2.0], [0.5, 0.0]),
        ]);
        let w = &window_scenes(&[s])[0];
        let cv = neighbor_future_cv(w).unwrap();
        assert_eq!(cv, w.neighbors[0].future);
    }
}
