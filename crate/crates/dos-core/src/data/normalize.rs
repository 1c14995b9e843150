//! Agent-frame normalization.
//!
//! Predictions run in the frame of the target agent at "now": its anchor
//! position maps to the origin and its heading to +x. Heading comes from
//! the anchor velocity; near-stationary agents fall back to the last
//! history step with speed >= 0.1 m/s, then to zero.

use super::{NormalizationTransform, Scene};
use crate::geometry::Point2;

const MIN_HEADING_SPEED: f64 = 0.1;

/// One agent's normalized features, targets, and masks.
///
/// Invalid steps carry zeroed features so that downstream tensors stay
/// finite no matter what the raw (masked) states contain; the masks are
/// what keeps them out of every loss and metric.
#[derive(Debug, Clone)]
pub struct NormalizedAgent {
    pub agent_index: usize,
    /// `(x, y, vx, vy)` per step, oldest first; length `history_steps + 1`
    /// (the anchor is the last entry).
    pub history: Vec<[f64; 4]>,
    pub history_mask: Vec<f64>,
    /// Future truth positions in the agent frame; length `future_steps`.
    pub future: Vec<Point2>,
    pub future_mask: Vec<f64>,
    /// Agent-frame velocity at the anchor.
    pub current_velocity: Point2,
    pub transform: NormalizationTransform,
}

/// Normalize around the scene's own anchor step.
pub fn normalize_agent(
    scene: &Scene,
    agent_index: usize,
    history_steps: usize,
    future_steps: usize,
) -> Option<NormalizedAgent> {
    normalize_agent_at(scene, agent_index, scene.anchor_index, history_steps, future_steps)
}

/// Normalize around an arbitrary anchor step (used when replanning).
/// Returns `None` when the anchor state is invalid.
pub fn normalize_agent_at(
    scene: &Scene,
    agent_index: usize,
    anchor: usize,
    history_steps: usize,
    future_steps: usize,
) -> Option<NormalizedAgent> {
    let agent = scene.agents.get(agent_index)?;
    if anchor >= agent.states.len() || !agent.is_valid(anchor) {
        return None;
    }
    let anchor_state = &agent.states[anchor];

    let mut rotation = 0.0;
    let mut found = false;
    for step in (0..=anchor).rev() {
        if !agent.is_valid(step) {
            continue;
        }
        let v = agent.states[step].vel;
        if v.norm() >= MIN_HEADING_SPEED {
            rotation = v.y.atan2(v.x);
            found = true;
            break;
        }
    }
    if !found {
        rotation = 0.0;
    }
    let transform = NormalizationTransform {
        origin: anchor_state.pos,
        rotation,
    };

    let mut history = Vec::with_capacity(history_steps + 1);
    let mut history_mask = Vec::with_capacity(history_steps + 1);
    for k in 0..=history_steps {
        let step = (anchor + k).checked_sub(history_steps);
        match step {
            Some(s) if agent.is_valid(s) => {
                let st = &agent.states[s];
                let p = transform.to_agent_point(st.pos);
                let v = transform.to_agent_vector(st.vel);
                history.push([p.x, p.y, v.x, v.y]);
                history_mask.push(1.0);
            }
            _ => {
                history.push([0.0; 4]);
                history_mask.push(0.0);
            }
        }
    }

    let mut future = Vec::with_capacity(future_steps);
    let mut future_mask = Vec::with_capacity(future_steps);
    for k in 1..=future_steps {
        let s = anchor + k;
        if s < agent.states.len() && agent.is_valid(s) {
            future.push(transform.to_agent_point(agent.states[s].pos));
            future_mask.push(1.0);
        } else {
            future.push(Point2::ORIGIN);
            future_mask.push(0.0);
        }
    }

    Some(NormalizedAgent {
        agent_index,
        history,
        history_mask,
        future,
        future_mask,
        current_velocity: transform.to_agent_vector(anchor_state.vel),
        transform,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{AgentState, AgentTrack};
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn scene_with_track(states: Vec<AgentState>, valid: Vec<bool>, anchor: usize) -> Scene {
        Scene {
            scene_id: "s".into(),
            dt: 0.5,
            anchor_index: anchor,
            agents: vec![AgentTrack {
                agent_id: "a".into(),
                states,
                valid,
            }],
            drivable_bounds: vec![
                Point2::new(-100.0, -100.0),
                Point2::new(100.0, -100.0),
                Point2::new(100.0, 100.0),
                Point2::new(-100.0, 100.0),
            ],
        }
    }

    #[test]
    fn anchor_maps_to_origin() {
        let states = vec![
            AgentState { t: -0.5, pos: Point2::new(9.0, 5.0), vel: Point2::new(2.0, 0.0) },
            AgentState { t: 0.0, pos: Point2::new(10.0, 5.0), vel: Point2::new(2.0, 0.0) },
            AgentState { t: 0.5, pos: Point2::new(11.0, 5.0), vel: Point2::new(2.0, 0.0) },
        ];
        let scene = scene_with_track(states, vec![true; 3], 1);
        let n = normalize_agent(&scene, 0, 1, 1).unwrap();
        let anchor_feat = n.history.last().unwrap();
        assert!(anchor_feat[0].abs() < 1e-12 && anchor_feat[1].abs() < 1e-12);
        assert!((anchor_feat[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heading_rotates_world_y_to_agent_x() {
        // Heading pi/2: a future point 1 m ahead in world +y normalizes to (1, 0).
        let states = vec![
            AgentState { t: 0.0, pos: Point2::ORIGIN, vel: Point2::new(0.0, 2.0) },
            AgentState { t: 0.5, pos: Point2::new(0.0, 1.0), vel: Point2::new(0.0, 2.0) },
        ];
        let scene = scene_with_track(states, vec![true; 2], 0);
        let n = normalize_agent(&scene, 0, 0, 1).unwrap();
        assert!((n.transform.rotation - FRAC_PI_2).abs() < 1e-12);
        assert!((n.future[0].x - 1.0).abs() < 1e-12);
        assert!(n.future[0].y.abs() < 1e-12);
    }

    #[test]
    fn round_trip_through_transform() {
        let states = vec![
            AgentState { t: 0.0, pos: Point2::new(3.0, -2.0), vel: Point2::new(1.0, 1.0) },
            AgentState { t: 0.5, pos: Point2::new(3.7, -1.3), vel: Point2::new(1.4, 1.4) },
        ];
        let scene = scene_with_track(states.clone(), vec![true; 2], 0);
        let n = normalize_agent(&scene, 0, 0, 1).unwrap();
        for (k, st) in states.iter().enumerate().skip(1) {
            let back = n.transform.to_world_point(n.future[k - 1]);
            assert!(back.dist(st.pos) < 1e-9);
        }
    }

    #[test]
    fn invalid_anchor_skips_agent() {
        let states = vec![
            AgentState { t: 0.0, pos: Point2::ORIGIN, vel: Point2::new(1.0, 0.0) },
            AgentState { t: 0.5, pos: Point2::new(0.5, 0.0), vel: Point2::new(1.0, 0.0) },
        ];
        let scene = scene_with_track(states, vec![false, true], 0);
        assert!(normalize_agent(&scene, 0, 0, 1).is_none());
    }

    #[test]
    fn stationary_agent_falls_back_to_earlier_heading() {
        let states = vec![
            AgentState { t: -0.5, pos: Point2::ORIGIN, vel: Point2::new(0.0, 3.0) },
            AgentState { t: 0.0, pos: Point2::new(0.0, 0.5), vel: Point2::new(0.0, 0.01) },
        ];
        let scene = scene_with_track(states, vec![true; 2], 1);
        let n = normalize_agent(&scene, 0, 1, 0).unwrap();
        assert!((n.transform.rotation - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn masked_steps_produce_zero_features_even_when_poisoned() {
        let states = vec![
            AgentState {
                t: -0.5,
                pos: Point2::new(f64::NAN, f64::NAN),
                vel: Point2::new(f64::NAN, f64::NAN),
            },
            AgentState { t: 0.0, pos: Point2::ORIGIN, vel: Point2::new(1.0, 0.0) },
            AgentState {
                t: 0.5,
                pos: Point2::new(f64::NAN, f64::NAN),
                vel: Point2::new(f64::NAN, f64::NAN),
            },
        ];
        let scene = scene_with_track(states, vec![false, true, false], 1);
        let n = normalize_agent(&scene, 0, 1, 1).unwrap();
        assert!(n.history.iter().flatten().all(|v| v.is_finite()));
        assert!(n.future.iter().all(|p| p.is_finite()));
        assert_eq!(n.history_mask, vec![0.0, 1.0]);
        assert_eq!(n.future_mask, vec![0.0]);
    }
}
