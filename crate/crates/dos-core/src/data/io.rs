//! Newline-delimited scenario files: one scene per line.
//!
//! Schema per line:
//! `{"scene_id", "dt", "anchor_index", "bounds": [[x,y],...],
//!   "agents": [{"agent_id", "states": [[t,x,y,vx,vy],...], "valid": [0/1,...]}]}`.
//! Coordinates in meters, times in seconds. Values are quantized to 9
//! significant digits before writing, which makes export bit-stable and
//! export-then-import lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quantize_sig9, AgentState, AgentTrack, DataError, Point2, Scene};

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    scene_id: String,
    dt: f64,
    anchor_index: usize,
    bounds: Vec<[f64; 2]>,
    agents: Vec<AgentRecord>,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    agent_id: String,
    states: Vec<[f64; 5]>,
    valid: Vec<u8>,
}

pub fn export_scenes(scenes: &[Scene], path: &Path) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    for scene in scenes {
        let record = SceneRecord {
            scene_id: scene.scene_id.clone(),
            dt: quantize_sig9(scene.dt),
            anchor_index: scene.anchor_index,
            bounds: scene
                .drivable_bounds
                .iter()
                .map(|p| [quantize_sig9(p.x), quantize_sig9(p.y)])
                .collect(),
            agents: scene
                .agents
                .iter()
                .map(|a| AgentRecord {
                    agent_id: a.agent_id.clone(),
                    states: a
                        .states
                        .iter()
                        .map(|s| {
                            [
                                quantize_sig9(s.t),
                                quantize_sig9(s.pos.x),
                                quantize_sig9(s.pos.y),
                                quantize_sig9(s.vel.x),
                                quantize_sig9(s.vel.y),
                            ]
                        })
                        .collect(),
                    valid: a.valid.iter().map(|v| u8::from(*v)).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| DataError::Parse { line: 0, detail: e.to_string() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a scenario file. Steps absent from an agent's record become
/// invalid entries on the scene grid.
pub fn load_scenes(path: &Path) -> Result<Vec<Scene>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: line_no,
                detail: e.to_string(),
            })?;
        scenes.push(scene_from_record(record, line_no)?);
    }
    Ok(scenes)
}

fn scene_from_record(record: SceneRecord, line: usize) -> Result<Scene, DataError> {
    if !(record.dt > 0.0) || !record.dt.is_finite() {
        return Err(DataError::Schema {
            line,
            detail: format!("dt must be positive, got {}", record.dt),
        });
    }
    if record.bounds.len() < 3 {
        return Err(DataError::Schema {
            line,
            detail: "bounds polygon needs at least 3 vertices".into(),
        });
    }
    let dt = record.dt;
    let tol = 1e-6 * dt.max(1.0);

    // The scene grid starts at the earliest timestamp across agents.
    let mut t0 = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for agent in &record.agents {
        if agent.states.is_empty() {
            return Err(DataError::Schema {
                line,
                detail: format!("agent {} has no states", agent.agent_id),
            });
        }
        if agent.valid.len() != agent.states.len() {
            return Err(DataError::Schema {
                line,
                detail: format!(
                    "agent {}: valid length {} != states length {}",
                    agent.agent_id,
                    agent.valid.len(),
                    agent.states.len()
                ),
            });
        }
        for s in &agent.states {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Schema {
                    line,
                    detail: format!("agent {}: non-finite state", agent.agent_id),
                });
            }
            t0 = t0.min(s[0]);
            t_max = t_max.max(s[0]);
        }
    }
    if record.agents.is_empty() {
        return Err(DataError::Schema {
            line,
            detail: "scene has no agents".into(),
        });
    }
    let n_steps = ((t_max - t0) / dt).round() as usize + 1;

    let mut agents = Vec::with_capacity(record.agents.len());
    for agent in record.agents {
        let mut states = vec![
            AgentState {
                t: 0.0,
                pos: Point2::ORIGIN,
                vel: Point2::ORIGIN,
            };
            n_steps
        ];
        let mut valid = vec![false; n_steps];
        // Grid placeholders still need timestamps.
        for (k, s) in states.iter_mut().enumerate() {
            s.t = quantize_sig9(t0 + k as f64 * dt);
        }
        let mut prev_slot: Option<usize> = None;
        for (s, v) in agent.states.iter().zip(&agent.valid) {
            let slot_f = (s[0] - t0) / dt;
            let slot = slot_f.round() as usize;
            if (slot_f - slot as f64).abs() * dt > tol || slot >= n_steps {
                return Err(DataError::Schema {
                    line,
                    detail: format!(
                        "agent {}: timestamp {} is off the uniform dt={} grid",
                        agent.agent_id, s[0], dt
                    ),
                });
            }
            if let Some(p) = prev_slot {
                if slot <= p {
                    return Err(DataError::Schema {
                        line,
                        detail: format!(
                            "agent {}: timestamps not strictly increasing",
                            agent.agent_id
                        ),
                    });
                }
            }
            prev_slot = Some(slot);
            states[slot] = AgentState {
                t: quantize_sig9(s[0]),
                pos: Point2::new(s[1], s[2]),
                vel: Point2::new(s[3], s[4]),
            };
            valid[slot] = *v != 0;
        }
        agents.push(AgentTrack {
            agent_id: agent.agent_id,
            states,
            valid,
        });
    }

    if record.anchor_index >= n_steps {
        return Err(DataError::Schema {
            line,
            detail: format!(
                "anchor_index {} outside grid of {} steps",
                record.anchor_index, n_steps
            ),
        });
    }

    Ok(Scene {
        scene_id: record.scene_id,
        dt,
        anchor_index: record.anchor_index,
        agents,
        drivable_bounds: record
            .bounds
            .into_iter()
            .map(|[x, y]| Point2::new(x, y))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_synthetic, DataConfig};
    use super::*;

    #[test]
    fn export_then_import_round_trips() {
        let cfg = DataConfig {
            scenes: 10,
            max_agents: 4,
            ..DataConfig::default()
        };
        let ds = generate_synthetic(&cfg, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.ndjson");
        export_scenes(&ds.scenes, &path).unwrap();
        let loaded = load_scenes(&path).unwrap();
        assert_eq!(loaded.len(), ds.scenes.len());
        for (orig, back) in ds.scenes.iter().zip(&loaded) {
            assert_eq!(orig.scene_id, back.scene_id);
            assert_eq!(orig.anchor_index, back.anchor_index);
            assert_eq!(orig.agents.len(), back.agents.len());
            for (a, b) in orig.agents.iter().zip(&back.agents) {
                assert_eq!(a.valid, b.valid);
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    assert_eq!(sa.pos.x.to_bits(), sb.pos.x.to_bits());
                    assert_eq!(sa.pos.y.to_bits(), sb.pos.y.to_bits());
                    assert_eq!(sa.vel.x.to_bits(), sb.vel.x.to_bits());
                    assert_eq!(sa.vel.y.to_bits(), sb.vel.y.to_bits());
                    assert_eq!(sa.t.to_bits(), sb.t.to_bits());
                }
            }
        }
    }

    #[test]
    fn export_twice_is_byte_identical() {
        let cfg = DataConfig {
            scenes: 5,
            ..DataConfig::default()
        };
        let ds = generate_synthetic(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ndjson");
        let p2 = dir.path().join("b.ndjson");
        export_scenes(&ds.scenes, &p1).unwrap();
        export_scenes(&ds.scenes, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.ndjson");
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, path)
    }

    #[test]
    fn full_track_loads_with_full_masks() {
        let states: Vec<String> = (0..14)
            .map(|k| {
                let t = k as f64 * 0.5 - 3.0;
                format!("[{t},{},{},1.0,0.0]", k as f64, 0.0)
            })
            .collect();
        let line = format!(
            "{{\"scene_id\":\"s\",\"dt\":0.5,\"anchor_index\":6,\"bounds\":[[-10,-10],[10,-10],[10,10],[-10,10]],\"agents\":[{{\"agent_id\":\"a\",\"states\":[{}],\"valid\":[{}]}}]}}",
            states.join(","),
            vec!["1"; 14].join(",")
        );
        let (_dir, path) = write_lines(&[&line]);
        let scenes = load_scenes(&path).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].steps(), 14);
        assert!(scenes[0].agents[0].valid.iter().all(|v| *v));
    }

    #[test]
    fn gap_in_states_becomes_invalid_steps() {
        // Steps at t = 0, 0.5, then a 3-step gap, then t = 2.5.
        let line = "{\"scene_id\":\"s\",\"dt\":0.5,\"anchor_index\":0,\"bounds\":[[-10,-10],[10,-10],[10,10],[-10,10]],\"agents\":[{\"agent_id\":\"a\",\"states\":[[0,0,0,1,0],[0.5,0.5,0,1,0],[2.5,2.5,0,1,0]],\"valid\":[1,1,1]}]}";
        let (_dir, path) = write_lines(&[line]);
        let scenes = load_scenes(&path).unwrap();
        let agent = &scenes[0].agents[0];
        assert_eq!(agent.valid, vec![true, true, false, false, false, true]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = "{\"scene_id\":\"s\",\"dt\":0.5,\"anchor_index\":0,\"bounds\":[[-1,-1],[1,-1],[1,1],[-1,1]],\"agents\":[{\"agent_id\":\"a\",\"states\":[[0,0,0,1,0]],\"valid\":[1]}]}";
        let (_dir, path) = write_lines(&[good, "{not json"]);
        match load_scenes(&path) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_timestamp_is_schema_error() {
        let line = "{\"scene_id\":\"s\",\"dt\":0.5,\"anchor_index\":0,\"bounds\":[[-1,-1],[1,-1],[1,1],[-1,1]],\"agents\":[{\"agent_id\":\"a\",\"states\":[[0,0,0,1,0],[0.7,1,0,1,0]],\"valid\":[1,1]}]}";
        let (_dir, path) = write_lines(&[line]);
        match load_scenes(&path) {
            Err(DataError::Schema { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
