//! Scenario schema, synthetic scene generation, scenario file I/O, and
//! agent-frame normalization.
//!
//! A [`Scene`] is a fixed uniform time grid with an anchor step marking
//! "now". Every agent carries a state per grid step plus a validity mask;
//! masked steps are never read by losses or metrics. All stored floats
//! are quantized to 9 significant decimal digits so that the scenario
//! file format round-trips losslessly.

mod io;
mod normalize;
mod synthetic;

pub use io::{export_scenes, load_scenes};
pub use normalize::{normalize_agent, normalize_agent_at, NormalizedAgent};
pub use synthetic::generate_synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("schema error at line {line}: {detail}")]
    Schema { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty sample set: {0}")]
    EmptySample(String),
}

/// One agent state on the scene grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub t: f64,
    pub pos: Point2,
    pub vel: Point2,
}

/// A time-indexed agent record with a per-step validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub states: Vec<AgentState>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn is_valid(&self, step: usize) -> bool {
        self.valid.get(step).copied().unwrap_or(false)
    }
}

/// A multi-agent scene on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub dt: f64,
    /// Grid index of "now" (t = 0); earlier steps are history.
    pub anchor_index: usize,
    pub agents: Vec<AgentTrack>,
    /// Drivable region as a closed simple polygon (closure implicit).
    pub drivable_bounds: Vec<Point2>,
}

impl Scene {
    pub fn steps(&self) -> usize {
        self.agents.first().map(|a| a.states.len()).unwrap_or(0)
    }

    /// Even-odd test against the drivable polygon.
    pub fn in_bounds(&self, p: Point2) -> bool {
        point_in_polygon(&self.drivable_bounds, p)
    }
}

pub fn point_in_polygon(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < xi {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Train/validation/test assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// An immutable collection of scenes with a split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl Dataset {
    /// Indices of scenes in the given split, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Assign splits to loaded scenes by position: the first
    /// `train_frac` of scenes train, the next `val_frac` validate, the
    /// rest test. Deterministic and independent of any seed.
    pub fn with_sequential_split(scenes: Vec<Scene>, train_frac: f64, val_frac: f64) -> Dataset {
        let n = scenes.len();
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = (n as f64 * val_frac).round() as usize;
        let splits = (0..n)
            .map(|i| {
                if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect();
        Dataset {
            scenes,
            splits,
            seed: 0,
        }
    }
}

/// Rigid map from world coordinates into an agent frame: the anchor
/// position goes to the origin and the anchor heading to +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub origin: Point2,
    pub rotation: f64,
}

impl NormalizationTransform {
    pub fn to_agent_point(&self, p: Point2) -> Point2 {
        p.sub(self.origin).rotated(-self.rotation)
    }

    pub fn to_world_point(&self, p: Point2) -> Point2 {
        self.origin.add(p.rotated(self.rotation))
    }

    pub fn to_agent_vector(&self, v: Point2) -> Point2 {
        v.rotated(-self.rotation)
    }

    pub fn to_world_vector(&self, v: Point2) -> Point2 {
        v.rotated(self.rotation)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.origin, self.rotation)
    }
}

/// Configuration of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scenes: usize,
    pub min_agents: usize,
    pub max_agents: usize,
    pub dt: f64,
    /// History steps before the anchor; features also include the anchor.
    pub history_steps: usize,
    /// Future (prediction) steps after the anchor.
    pub future_steps: usize,
    /// Half extents of the rectangular drivable region, meters.
    pub region_half_extent: [f64; 2],
    pub speed_range: [f64; 2],
    /// Mixture weights for constant-velocity, constant-acceleration,
    /// constant-turn-rate motion.
    pub model_weights: [f64; 3],
    pub accel_sigma: f64,
    pub turn_rate_sigma: f64,
    /// Per-step velocity jitter (m/s); positions integrate it.
    pub noise_vel: f64,
    /// Probability that an agent switches motion parameters at a random
    /// future step, creating hard-to-predict cases.
    pub mode_switch_prob: f64,
    /// Probability of truncating the oldest history steps of an agent.
    pub drop_history_prob: f64,
    /// Probability of truncating the last future steps of an agent.
    pub drop_future_prob: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenes: 2000,
            min_agents: 1,
            max_agents: 8,
            dt: 0.5,
            history_steps: 6,
            future_steps: 8,
            region_half_extent: [60.0, 40.0],
            speed_range: [0.5, 12.0],
            model_weights: [0.4, 0.3, 0.3],
            accel_sigma: 0.8,
            turn_rate_sigma: 0.25,
            noise_vel: 0.12,
            mode_switch_prob: 0.25,
            drop_history_prob: 0.1,
            drop_future_prob: 0.05,
            train_frac: 0.7,
            val_frac: 0.15,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.scenes == 0 {
            return Err(DataError::InvalidConfig("scenes must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return Err(DataError::InvalidConfig(format!(
                "agent count range {}..={} invalid",
                self.min_agents, self.max_agents
            )));
        }
        if self.history_steps == 0 || self.future_steps == 0 {
            return Err(DataError::InvalidConfig(
                "history_steps and future_steps must be positive".into(),
            ));
        }
        if self.model_weights.iter().any(|w| *w < 0.0)
            || self.model_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(DataError::InvalidConfig(
                "model_weights must be nonnegative and not all zero".into(),
            ));
        }
        if !(self.train_frac >= 0.0
            && self.val_frac >= 0.0
            && self.train_frac + self.val_frac <= 1.0)
        {
            return Err(DataError::InvalidConfig("split fractions invalid".into()));
        }
        Ok(())
    }

    /// Total grid steps per scene: history, anchor, future.
    pub fn total_steps(&self) -> usize {
        self.history_steps + 1 + self.future_steps
    }
}

/// Quantize to 9 significant decimal digits. The scenario format renders
/// quantized values with the shortest round-trip decimal, so export
/// followed by import reproduces stored values bit-exactly.
pub fn quantize_sig9(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.8e}").parse().unwrap()
}
