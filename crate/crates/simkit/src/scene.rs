use crate::error::SimError;

/// Positions of a fixed set of agents over a shared, gap-free run of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryScene {
    pub scene_id: String,
    pub env_id: String,
    /// Seconds between consecutive frames.
    pub dt: f64,
    pub agent_ids: Vec<u64>,
    /// `tracks[a][t]` is agent `a`'s position at frame `t`, meters.
    pub tracks: Vec<Vec<[f64; 2]>>,
}

impl TrajectoryScene {
    pub fn new(
        scene_id: impl Into<String>,
        env_id: impl Into<String>,
        dt: f64,
        agent_ids: Vec<u64>,
        tracks: Vec<Vec<[f64; 2]>>,
    ) -> Result<Self, SimError> {
        let scene = Self {
            scene_id: scene_id.into(),
            env_id: env_id.into(),
            dt,
            agent_ids,
            tracks,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidScene(format!("{}: {m}", self.scene_id)));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("timestep must be positive, got {}", self.dt));
        }
        if self.tracks.is_empty() {
            return fail("no agents".into());
        }
        if self.agent_ids.len() != self.tracks.len() {
            return fail(format!(
                "{} ids for {} tracks",
                self.agent_ids.len(),
                self.tracks.len()
            ));
        }
        let len = self.tracks[0].len();
        if let Some(a) = self.tracks.iter().position(|t| t.len() != len) {
            return fail(format!(
                "track {a} has {} frames, expected {len}",
                self.tracks[a].len()
            ));
        }
        if self
            .tracks
            .iter()
            .flatten()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return fail("non-finite position".into());
        }
        let mut ids = self.agent_ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate agent id".into());
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.tracks.len()
    }

    pub fn n_frames(&self) -> usize {
        self.tracks.first().map_or(0, Vec::len)
    }

    /// Smallest center distance between any two agents at any frame;
    /// `None` with fewer than two agents.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for t in 0..self.n_frames() {
            for a in 0..self.n_agents() {
                for b in a + 1..self.n_agents() {
                    let d = distance(self.tracks[a][t], self.tracks[b][t]);
                    best = Some(best.map_or(d, |m| m.min(d)));
                }
            }
        }
        best
    }

    /// Mean over agents of the closest approach to any other agent.
    pub fn mean_min_distance(&self) -> Option<f64> {
        let n = self.n_agents();
        if n < 2 {
            return None;
        }
        let total: f64 = (0..n)
            .map(|a| {
                (0..self.n_frames())
                    .flat_map(|t| {
                        (0..n)
                            .filter(move |&b| b != a)
                            .map(move |b| distance(self.tracks[a][t], self.tracks[b][t]))
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        Some(total / n as f64)
    }

    /// Largest per-frame displacement divided by the timestep.
    pub fn max_speed(&self) -> f64 {
        self.tracks
            .iter()
            .flat_map(|t| t.windows(2).map(|w| distance(w[0], w[1]) / self.dt))
            .fold(0.0, f64::max)
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
