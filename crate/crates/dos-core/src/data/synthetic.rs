//! Synthetic kinematic traffic scenes.
//!
//! Agents follow constant-velocity, constant-acceleration, or
//! constant-turn-rate motion with Gaussian velocity jitter, and may
//! switch motion parameters once at a random future step. Everything is
//! drawn from a single seeded stream, so `(config, seed)` fully
//! determines the dataset.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{quantize_sig9, AgentState, AgentTrack, DataConfig, DataError, Dataset, Scene, Split};
use crate::geometry::{wrap_heading, Point2};

#[derive(Clone, Copy)]
struct Motion {
    accel: f64,
    turn_rate: f64,
}

fn sample_motion(cfg: &DataConfig, rng: &mut ChaCha8Rng) -> Motion {
    let total: f64 = cfg.model_weights.iter().sum();
    let pick = rng.gen_range(0.0..total);
    let normal_a = Normal::new(0.0, cfg.accel_sigma).unwrap();
    let normal_w = Normal::new(0.0, cfg.turn_rate_sigma).unwrap();
    if pick < cfg.model_weights[0] {
        Motion {
            accel: 0.0,
            turn_rate: 0.0,
        }
    } else if pick < cfg.model_weights[0] + cfg.model_weights[1] {
        Motion {
            accel: normal_a.sample(rng),
            turn_rate: 0.0,
        }
    } else {
        Motion {
            accel: normal_a.sample(rng) * 0.3,
            turn_rate: normal_w.sample(rng),
        }
    }
}

pub fn generate_synthetic(cfg: &DataConfig, seed: u64) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_steps = cfg.total_steps();
    let [hx, hy] = cfg.region_half_extent;
    let noise = if cfg.noise_vel > 0.0 {
        Some(Normal::new(0.0, cfg.noise_vel).unwrap())
    } else {
        None
    };

    let mut scenes = Vec::with_capacity(cfg.scenes);
    for scene_idx in 0..cfg.scenes {
        let n_agents = rng.gen_range(cfg.min_agents..=cfg.max_agents);
        let mut agents = Vec::with_capacity(n_agents);
        for agent_idx in 0..n_agents {
            let mut pos = Point2::new(
                rng.gen_range(-0.6 * hx..0.6 * hx),
                rng.gen_range(-0.6 * hy..0.6 * hy),
            );
            let mut heading = wrap_heading(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
            let mut speed = rng.gen_range(cfg.speed_range[0]..cfg.speed_range[1]);
            let mut motion = sample_motion(cfg, &mut rng);
            let switch_step = if rng.gen_bool(cfg.mode_switch_prob) {
                Some(rng.gen_range(cfg.history_steps + 1..total_steps))
            } else {
                None
            };

            let mut states = Vec::with_capacity(total_steps);
            for step in 0..total_steps {
                if switch_step == Some(step) {
                    motion = sample_motion(cfg, &mut rng);
                }
                let mut vel = Point2::new(speed * heading.cos(), speed * heading.sin());
                if let Some(n) = &noise {
                    vel = vel.add(Point2::new(n.sample(&mut rng), n.sample(&mut rng)));
                }
                let t = (step as f64 - cfg.history_steps as f64) * cfg.dt;
                states.push(AgentState {
                    t: quantize_sig9(t),
                    pos: Point2::new(quantize_sig9(pos.x), quantize_sig9(pos.y)),
                    vel: Point2::new(quantize_sig9(vel.x), quantize_sig9(vel.y)),
                });
                pos = pos.add(vel.scale(cfg.dt));
                heading = wrap_heading(heading + motion.turn_rate * cfg.dt);
                speed = (speed + motion.accel * cfg.dt).max(0.0);
            }

            let mut valid = vec![true; total_steps];
            if cfg.history_steps > 1 && rng.gen_bool(cfg.drop_history_prob) {
                let k = rng.gen_range(1..cfg.history_steps);
                for v in valid.iter_mut().take(k) {
                    *v = false;
                }
            }
            if cfg.future_steps > 1 && rng.gen_bool(cfg.drop_future_prob) {
                let k = rng.gen_range(1..=cfg.future_steps / 2);
                let n = valid.len();
                for v in valid.iter_mut().skip(n - k) {
                    *v = false;
                }
            }

            agents.push(AgentTrack {
                agent_id: format!("a{agent_idx}"),
                states,
                valid,
            });
        }
        scenes.push(Scene {
            scene_id: format!("scene{scene_idx:05}"),
            dt: cfg.dt,
            anchor_index: cfg.history_steps,
            agents,
            drivable_bounds: vec![
                Point2::new(-hx, -hy),
                Point2::new(hx, -hy),
                Point2::new(hx, hy),
                Point2::new(-hx, hy),
            ],
        });
    }

    // Seeded permutation drives the split assignment.
    let mut order: Vec<usize> = (0..cfg.scenes).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (cfg.scenes as f64 * cfg.train_frac).round() as usize;
    let n_val = (cfg.scenes as f64 * cfg.val_frac).round() as usize;
    let mut splits = vec![Split::Test; cfg.scenes];
    for (rank, idx) in order.into_iter().enumerate() {
        splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    Ok(Dataset {
        scenes,
        splits,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DataConfig {
        DataConfig {
            scenes: 20,
            max_agents: 4,
            ..DataConfig::default()
        }
    }

    #[test]
    fn deterministic_per_config_and_seed() {
        let cfg = small_config();
        let a = generate_synthetic(&cfg, 42).unwrap();
        let b = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn horizon_grid_covers_one_to_four_seconds() {
        let cfg = DataConfig {
            scenes: 1,
            ..DataConfig::default()
        };
        let ds = generate_synthetic(&cfg, 42).unwrap();
        let scene = &ds.scenes[0];
        assert_eq!(scene.steps(), 15);
        assert_eq!(scene.anchor_index, 6);
        let anchor_t = scene.agents[0].states[scene.anchor_index].t;
        assert_eq!(anchor_t, 0.0);
        // future steps 2, 4, 6, 8 land on 1 s .. 4 s
        for (k, expect) in [(2usize, 1.0), (4, 2.0), (6, 3.0), (8, 4.0)] {
            let t = scene.agents[0].states[scene.anchor_index + k].t;
            assert!((t - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_constant_velocity_is_exactly_linear() {
        let cfg = DataConfig {
            scenes: 5,
            noise_vel: 0.0,
            model_weights: [1.0, 0.0, 0.0],
            mode_switch_prob: 0.0,
            drop_history_prob: 0.0,
            drop_future_prob: 0.0,
            ..DataConfig::default()
        };
        let ds = generate_synthetic(&cfg, 7).unwrap();
        for scene in &ds.scenes {
            for agent in &scene.agents {
                let s0 = &agent.states[0];
                let s1 = &agent.states[1];
                let step = s1.pos.sub(s0.pos);
                for w in agent.states.windows(2) {
                    let d = w[1].pos.sub(w[0].pos);
                    // Quantization leaves ~1e-8 relative wiggle.
                    assert!((d.x - step.x).abs() < 1e-6);
                    assert!((d.y - step.y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let cfg = small_config();
        let ds = generate_synthetic(&cfg, 1).unwrap();
        let n_train = ds.split_indices(Split::Train).len();
        let n_val = ds.split_indices(Split::Val).len();
        let n_test = ds.split_indices(Split::Test).len();
        assert_eq!(n_train + n_val + n_test, cfg.scenes);
        assert!(n_train > 0 && n_val > 0 && n_test > 0);
    }
}
