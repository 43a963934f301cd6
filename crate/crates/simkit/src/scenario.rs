//! Circle-crossing scenarios and their rollout into fixed-length scenes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::orca::{orca_step, AgentState, StyleParams};
use crate::scene::TrajectoryScene;
use crate::vec2::Vec2;

/// Simulator settings shared by every scene of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub radius: f64,
    pub preferred_speed: [f64; 2],
    /// Max speed as a multiple of the preferred speed.
    pub max_speed_factor: f64,
    pub circle_radius: f64,
    /// Inclusive range of agents per scene.
    pub n_agents: [usize; 2],
    /// Half-width of the uniform jitter applied to start and goal
    /// coordinates, meters.
    pub position_jitter: f64,
    /// Starts (and goals) closer than this are rejected during placement.
    pub min_spawn_gap: f64,
    pub placement_attempts: usize,
    pub goal_tolerance: f64,
    pub step_cap: usize,
    /// Frames kept per scene (8 observed + 12 predicted).
    pub scene_len: usize,
    pub time_horizon: f64,
    pub neighbor_range: f64,
    /// Seconds between recorded frames.
    pub dt: f64,
    /// ORCA updates per recorded frame.
    pub substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            radius: 0.3,
            preferred_speed: [0.8, 1.2],
            max_speed_factor: 1.5,
            circle_radius: 4.0,
            n_agents: [2, 6],
            position_jitter: 0.5,
            min_spawn_gap: 1.2,
            placement_attempts: 1000,
            goal_tolerance: 0.1,
            step_cap: 200,
            scene_len: 20,
            time_horizon: 2.0,
            neighbor_range: 10.0,
            dt: 0.4,
            substeps: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        let [lo, hi] = self.preferred_speed;
        if !(lo > 0.0 && lo <= hi) {
            return bad("preferred speed range must be positive and ordered");
        }
        if !(self.max_speed_factor >= 1.0) {
            return bad("max speed factor must be >= 1");
        }
        if !(self.circle_radius > 0.0) {
            return bad("circle radius must be positive");
        }
        if self.n_agents[0] < 1 || self.n_agents[0] > self.n_agents[1] {
            return bad("agent count range must be ordered and >= 1");
        }
        if self.scene_len < 2 || self.step_cap < self.scene_len {
            return bad("step cap must allow a full scene");
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1");
        }
        if !(self.goal_tolerance > 0.0 && self.dt > 0.0 && self.position_jitter >= 0.0) {
            return bad("tolerance and timestep must be positive, jitter non-negative");
        }
        Ok(())
    }

    pub fn style(&self, separation: f64) -> StyleParams<f64> {
        StyleParams {
            separation,
            time_horizon: self.time_horizon,
            neighbor_range: self.neighbor_range,
            dt: self.dt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Evenly spaced angles starting at 0, exact antipodal goals, mean
    /// preferred speed.
    Symmetric,
    /// Random angles and speeds, jittered starts and goals.
    Perturbed,
}

/// Agents on a circle of `circle_radius` around the origin heading for the
/// opposite side.
pub fn generate_circle_crossing(
    n_agents: usize,
    circle_radius: f64,
    seed: u64,
    placement: Placement,
    config: &SimConfig,
) -> Result<Vec<AgentState<f64>>, SimError> {
    if n_agents < 2 {
        return Err(SimError::InvalidConfig(format!(
            "need at least 2 agents, got {n_agents}"
        )));
    }
    if !(circle_radius > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "circle radius must be positive, got {circle_radius}"
        )));
    }
    config.validate()?;
    let [lo, hi] = config.preferred_speed;
    let agent = |position: Vec2<f64>, goal: Vec2<f64>, speed: f64| AgentState {
        position,
        velocity: Vec2::zero(),
        goal,
        radius: config.radius,
        preferred_speed: speed,
        max_speed: speed * config.max_speed_factor,
    };

    if placement == Placement::Symmetric {
        let agents: Vec<_> = (0..n_agents)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / n_agents as f64;
                let p = Vec2::new(angle.cos(), angle.sin()) * circle_radius;
                agent(p, -p, 0.5 * (lo + hi))
            })
            .collect();
        let spacing = (agents[0].position - agents[1].position).norm();
        if spacing <= 2.0 * config.radius {
            return Err(SimError::Placement {
                n_agents,
                attempts: 1,
            });
        }
        return Ok(agents);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = config.position_jitter;
    let mut agents: Vec<AgentState<f64>> = Vec::with_capacity(n_agents);
    let mut attempts = 0;
    while agents.len() < n_agents {
        attempts += 1;
        if attempts > config.placement_attempts {
            return Err(SimError::Placement {
                n_agents,
                attempts: attempts - 1,
            });
        }
        let angle = rng.gen_range(0.0..2.0 * PI);
        let on_circle = Vec2::new(angle.cos(), angle.sin()) * circle_radius;
        let mut noise = || {
            if jitter > 0.0 {
                Vec2::new(
                    rng.gen_range(-jitter..jitter),
                    rng.gen_range(-jitter..jitter),
                )
            } else {
                Vec2::zero()
            }
        };
        let start = on_circle + noise();
        let goal = -on_circle + noise();
        let clear = agents.iter().all(|a| {
            (a.position - start).norm() > config.min_spawn_gap
                && (a.goal - goal).norm() > config.min_spawn_gap
        });
        if !clear {
            continue;
        }
        let speed = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        agents.push(agent(start, goal, speed));
    }
    Ok(agents)
}

/// Full ORCA rollout: frame 0 is the initial state, and stepping continues
/// until every agent is within tolerance of its goal and at least
/// `min_frames` frames exist. Each frame advances `style.dt` seconds in
/// `config.substeps` ORCA updates.
pub fn rollout(
    initial: &[AgentState<f64>],
    style: &StyleParams<f64>,
    seed: u64,
    config: &SimConfig,
    min_frames: usize,
) -> Result<Vec<Vec<Vec2<f64>>>, SimError> {
    if initial.is_empty() {
        return Err(SimError::NoAgents);
    }
    style.validate()?;
    for a in initial {
        a.validate()?;
    }
    let substeps = config.substeps.max(1);
    let inner = StyleParams {
        dt: style.dt / substeps as f64,
        ..*style
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = initial.to_vec();
    let mut frames = vec![agents.iter().map(|a| a.position).collect::<Vec<_>>()];
    let arrived = |agents: &[AgentState<f64>]| {
        agents
            .iter()
            .all(|a| a.distance_to_goal() <= config.goal_tolerance)
    };
    while !(arrived(&agents) && frames.len() >= min_frames) {
        if frames.len() > config.step_cap {
            return Err(SimError::StepCap {
                cap: config.step_cap,
                recorded: frames.len(),
            });
        }
        for _ in 0..substeps {
            let velocities = orca_step(&agents, &inner, &mut rng)?;
            for (a, v) in agents.iter_mut().zip(velocities) {
                a.velocity = v;
                a.position += v * inner.dt;
            }
        }
        frames.push(agents.iter().map(|a| a.position).collect());
    }
    Ok(frames)
}

/// First frame of the `len`-frame window centered on the crossing
/// midpoint: the frame where agents are, in total, closest to halfway
/// between their starts and goals.
pub fn crossing_window_start(
    frames: &[Vec<Vec2<f64>>],
    initial: &[AgentState<f64>],
    len: usize,
) -> usize {
    let halfway: Vec<Vec2<f64>> = initial
        .iter()
        .map(|a| (a.position + a.goal) * 0.5)
        .collect();
    let mut best = (f64::INFINITY, 0);
    for (t, frame) in frames.iter().enumerate() {
        let cost: f64 = frame
            .iter()
            .zip(&halfway)
            .map(|(p, h)| (*p - *h).norm())
            .sum();
        if cost < best.0 {
            best = (cost, t);
        }
    }
    best.1
        .saturating_sub(len / 2)
        .min(frames.len().saturating_sub(len))
}

/// Simulates `initial` under `style` and keeps exactly `config.scene_len`
/// frames around the crossing midpoint.
pub fn simulate_scene(
    initial: &[AgentState<f64>],
    style: &StyleParams<f64>,
    seed: u64,
    config: &SimConfig,
    scene_id: impl Into<String>,
    env_id: impl Into<String>,
) -> Result<TrajectoryScene, SimError> {
    config.validate()?;
    let frames = rollout(initial, style, seed, config, config.scene_len)?;
    let start = crossing_window_start(&frames, initial, config.scene_len);
    let kept = &frames[start..start + config.scene_len];
    let tracks = (0..initial.len())
        .map(|a| kept.iter().map(|f| [f[a].x, f[a].y]).collect())
        .collect();
    TrajectoryScene::new(
        scene_id,
        env_id,
        style.dt,
        (0..initial.len() as u64).collect(),
        tracks,
    )
}
