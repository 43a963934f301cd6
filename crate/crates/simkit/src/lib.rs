//! Crowd simulation with optimal reciprocal collision avoidance and
//! circle-crossing scene generation.
//!
//! The collision-avoidance core ([`orca_step`], [`lp`]) is generic over the
//! float type; scenario generation and scenes work in `f64` meters.

// Range checks are written so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
mod error;
pub mod lp;
pub mod orca;
pub mod scenario;
pub mod scene;
pub mod tsv;
mod vec2;

pub use dataset::{
    generate_dataset, generate_scene, generate_scenes, read_manifest, style_env_id, Split,
    SplitCounts, StyleManifest,
};
pub use error::SimError;
pub use orca::{orca_step, AgentState, StyleParams};
pub use scenario::{generate_circle_crossing, rollout, simulate_scene, Placement, SimConfig};
pub use scene::TrajectoryScene;
pub use tsv::{load_tsv, parse_tsv, render_tsv, write_tsv};
pub use vec2::Vec2;

pub type Vec2f64 = Vec2<f64>;
pub type AgentState64 = AgentState<f64>;
pub type StyleParams64 = StyleParams<f64>;
pub type Vec2f32 = Vec2<f32>;
pub type AgentState32 = AgentState<f32>;
pub type StyleParams32 = StyleParams<f32>;
