//! Optimal reciprocal collision avoidance for disc-shaped agents.
//!
//! Every neighbor within range contributes one half-plane of permitted
//! velocities (each agent takes half of the avoidance effort). The new
//! velocity is the permitted velocity closest to the preferred one, with
//! norm at most the agent's max speed.
//!
//! The style parameter `d` (minimum separation) inflates every radius by
//! `d / 2`, so two agents keep their centers `r_a + r_b + d` apart.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::lp::{self, HalfPlane};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState<F> {
    pub position: Vec2<F>,
    pub velocity: Vec2<F>,
    pub goal: Vec2<F>,
    pub radius: F,
    pub preferred_speed: F,
    pub max_speed: F,
}

impl<F: Float> AgentState<F> {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.radius > F::zero()) {
            return Err(SimError::InvalidAgent("radius must be positive".into()));
        }
        if !(self.preferred_speed >= F::zero() && self.preferred_speed <= self.max_speed) {
            return Err(SimError::InvalidAgent(
                "preferred speed must lie in [0, max speed]".into(),
            ));
        }
        if !(self.position.is_finite() && self.velocity.is_finite() && self.goal.is_finite()) {
            return Err(SimError::InvalidAgent("non-finite state".into()));
        }
        Ok(())
    }

    pub fn distance_to_goal(&self) -> F {
        (self.goal - self.position).norm()
    }

    /// Straight at the goal at preferred speed, slowing down so the next
    /// step does not overshoot. Zero at the goal.
    pub fn preferred_velocity(&self, dt: F) -> Vec2<F> {
        let to_goal = self.goal - self.position;
        let dist = to_goal.norm();
        if dist <= F::epsilon() {
            return Vec2::zero();
        }
        let speed = self.preferred_speed.min(dist / dt);
        to_goal * (speed / dist)
    }
}

/// How an environment's agents move: separation style plus ORCA settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams<F> {
    /// Minimum separation distance `d`, meters.
    pub separation: F,
    /// ORCA time horizon, seconds.
    pub time_horizon: F,
    /// Neighbors farther than this are ignored, meters.
    pub neighbor_range: F,
    /// Simulation timestep, seconds.
    pub dt: F,
}

impl<F: Float> StyleParams<F> {
    pub fn new(separation: F) -> Self {
        Self {
            separation,
            time_horizon: F::from(2.0).unwrap(),
            neighbor_range: F::from(10.0).unwrap(),
            dt: F::from(0.4).unwrap(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.separation >= F::zero()) {
            return Err(SimError::InvalidStyle("separation must be >= 0".into()));
        }
        if !(self.time_horizon > F::zero()
            && self.dt > F::zero()
            && self.neighbor_range > F::zero())
        {
            return Err(SimError::InvalidStyle(
                "time horizon, timestep and range must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_radius(&self, radius: F) -> F {
        radius + self.separation / F::from(2.0).unwrap()
    }
}

/// Distance below which two agent centers count as coincident.
fn coincident_eps<F: Float>() -> F {
    F::from(1e-9).unwrap()
}

/// ORCA half-plane for `agent` induced by `other`.
fn half_plane<F: Float>(
    agent: &AgentState<F>,
    other: &AgentState<F>,
    style: &StyleParams<F>,
) -> HalfPlane<F> {
    let half = F::from(0.5).unwrap();
    let rel_pos = other.position - agent.position;
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined = style.effective_radius(agent.radius) + style.effective_radius(other.radius);
    let combined_sq = combined * combined;
    let inv_horizon = F::one() / style.time_horizon;

    let (direction, u) = if dist_sq > combined_sq {
        // w: from the center of the truncation disc to the relative velocity
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.norm_sq();
        let dot = w.dot(rel_pos);
        if dot < F::zero() && dot * dot > combined_sq * w_len_sq {
            // closest boundary point is on the truncation arc
            let w_len = w_len_sq.sqrt();
            let unit = w / w_len;
            (
                Vec2::new(unit.y, -unit.x),
                unit * (combined * inv_horizon - w_len),
            )
        } else {
            // closest boundary point is on one of the cone legs
            let leg = (dist_sq - combined_sq).sqrt();
            let direction = if rel_pos.det(w) > F::zero() {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            let along = rel_vel.dot(direction);
            (direction, direction * along - rel_vel)
        }
    } else {
        // already overlapping: resolve within one timestep
        let inv_dt = F::one() / style.dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit = w / w_len;
        (
            Vec2::new(unit.y, -unit.x),
            unit * (combined * inv_dt - w_len),
        )
    };
    HalfPlane {
        point: agent.velocity + u * half,
        direction,
    }
}

/// New velocity for every agent, computed simultaneously from the current
/// states. Half-planes are visited in a random order drawn from `rng`.
pub fn orca_step<F: Float, R: Rng + ?Sized>(
    agents: &[AgentState<F>],
    style: &StyleParams<F>,
    rng: &mut R,
) -> Result<Vec<Vec2<F>>, SimError> {
    if agents.is_empty() {
        return Err(SimError::NoAgents);
    }
    style.validate()?;
    let range_sq = style.neighbor_range * style.neighbor_range;
    let mut out = Vec::with_capacity(agents.len());
    for (i, agent) in agents.iter().enumerate() {
        agent.validate()?;
        let mut lines = Vec::new();
        for (j, other) in agents.iter().enumerate() {
            if i == j {
                continue;
            }
            let d_sq = (other.position - agent.position).norm_sq();
            if d_sq <= coincident_eps::<F>() * coincident_eps::<F>() {
                return Err(SimError::Coincident { a: i, b: j });
            }
            if d_sq <= range_sq {
                lines.push(half_plane(agent, other, style));
            }
        }
        lines.shuffle(rng);
        let preferred = agent.preferred_velocity(style.dt);
        let mut v = lp::solve(&lines, agent.max_speed, preferred).point();
        let speed = v.norm();
        if speed > agent.max_speed {
            v = v * (agent.max_speed / speed);
        }
        out.push(v);
    }
    Ok(out)
}
