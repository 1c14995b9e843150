//! The trajectory predictor: embedding, GRU encoder over history, GRU
//! decoder emitting per-step position increments.
//!
//! The decoder starts from the encoder's final hidden state, takes the
//! previous predicted position as input, and outputs a delta that is
//! accumulated, so predictions are positions in the agent frame. The
//! encoder final hidden state doubles as the feature vector consumed by
//! the occupancy-set heads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::layers::{GruSpec, LinearSpec};
use super::params::{BoundParams, ParamStore};
use super::ModelError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{Dataset, Split};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub history_steps: usize,
    pub future_steps: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            embed_dim: 32,
            hidden_dim: 64,
            history_steps: 6,
            future_steps: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryPredictor {
    pub cfg: PredictorConfig,
    embed: LinearSpec,
    encoder: GruSpec,
    decoder: GruSpec,
    output: LinearSpec,
}

/// Per-step predicted positions (as `[B]` x/y pairs and `[B, 2]` mats)
/// plus the encoder feature vector.
pub struct PredictorForward {
    pub pos: Vec<Var>,
    pub pos_x: Vec<Var>,
    pub pos_y: Vec<Var>,
    pub hidden: Var,
}

impl TrajectoryPredictor {
    pub fn init(cfg: PredictorConfig, store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = LinearSpec::init("traj.embed", 4, cfg.embed_dim, store, &mut rng);
        let encoder = GruSpec::init("traj.encoder", cfg.embed_dim, cfg.hidden_dim, store, &mut rng);
        let decoder = GruSpec::init("traj.decoder", 2, cfg.hidden_dim, store, &mut rng);
        let output = LinearSpec::init("traj.out", cfg.hidden_dim, 2, store, &mut rng);
        TrajectoryPredictor {
            cfg,
            embed,
            encoder,
            decoder,
            output,
        }
    }

    /// Attach to an existing store (e.g. a loaded checkpoint), verifying
    /// every expected parameter name and shape.
    pub fn attach(cfg: PredictorConfig, store: &ParamStore) -> Result<Self, ModelError> {
        let embed = LinearSpec::attach("traj.embed", 4, cfg.embed_dim, store)?;
        let encoder = GruSpec::attach("traj.encoder", cfg.embed_dim, cfg.hidden_dim, store)?;
        let decoder = GruSpec::attach("traj.decoder", 2, cfg.hidden_dim, store)?;
        let output = LinearSpec::attach("traj.out", cfg.hidden_dim, 2, store)?;
        Ok(TrajectoryPredictor {
            cfg,
            embed,
            encoder,
            decoder,
            output,
        })
    }

    /// Parameter name prefix, used for freezing.
    pub fn param_prefix() -> &'static str {
        "traj."
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
    ) -> Result<PredictorForward, AutodiffError> {
        let b = batch.len();
        let hd = self.cfg.hidden_dim;
        let mut h = tape.leaf(Tensor::zeros(vec![b, hd]));
        for k in 0..batch.history_steps() {
            let x = tape.leaf(batch.hist_feats[k].clone());
            let e_pre = self.embed.forward(tape, bound, x)?;
            let e = tape.tanh(e_pre)?;
            let mask_vec = tape.leaf(batch.hist_mask[k].clone());
            let mask = tape.tile_cols(mask_vec, hd)?;
            h = self.encoder.step(tape, bound, e, h, Some(mask))?;
        }
        let hidden = h;

        let mut dec_h = hidden;
        let mut prev = tape.leaf(Tensor::zeros(vec![b, 2]));
        let tf = batch.future_steps();
        let mut pos = Vec::with_capacity(tf);
        let mut pos_x = Vec::with_capacity(tf);
        let mut pos_y = Vec::with_capacity(tf);
        for _ in 0..tf {
            dec_h = self.decoder.step(tape, bound, prev, dec_h, None)?;
            let delta = self.output.forward(tape, bound, dec_h)?;
            let p = tape.add(prev, delta)?;
            let px_m = tape.slice_cols(p, 0, 1)?;
            let py_m = tape.slice_cols(p, 1, 1)?;
            pos_x.push(tape.reshape(px_m, vec![b])?);
            pos_y.push(tape.reshape(py_m, vec![b])?);
            pos.push(p);
            prev = p;
        }
        Ok(PredictorForward {
            pos,
            pos_x,
            pos_y,
            hidden,
        })
    }
}

/// Frozen forward pass of one scene batch: predicted agent-frame
/// trajectories plus encoder features, as plain tensors.
#[derive(Debug, Clone)]
pub struct ScenePrediction {
    pub batch: Batch,
    /// `[agent][step]` predicted positions in each agent's frame.
    pub trajectories: Vec<Vec<Point2>>,
    /// Encoder features, `[B, hidden_dim]`.
    pub features: Tensor,
}

/// Run the predictor without gradients and extract values.
pub fn predict_batch(
    predictor: &TrajectoryPredictor,
    store: &ParamStore,
    batch: Batch,
) -> Result<ScenePrediction, AutodiffError> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let fwd = predictor.forward(&mut tape, &bound, &batch)?;
    let b = batch.len();
    let tf = batch.future_steps();
    let mut trajectories = vec![Vec::with_capacity(tf); b];
    for t in 0..tf {
        let xs = tape.value(fwd.pos_x[t]).data();
        let ys = tape.value(fwd.pos_y[t]).data();
        for (row, traj) in trajectories.iter_mut().enumerate() {
            traj.push(Point2::new(xs[row], ys[row]));
        }
    }
    let features = tape.value(fwd.hidden).clone();
    Ok(ScenePrediction {
        batch,
        trajectories,
        features,
    })
}

/// Mean Euclidean prediction error per future step over the valid
/// samples of a split; the error-based baseline uses this as its radius
/// table. Errors if some step has no valid samples.
pub fn error_stats(
    predictor: &TrajectoryPredictor,
    store: &ParamStore,
    dataset: &Dataset,
    split: Split,
) -> Result<Vec<f64>, ModelError> {
    let tf = predictor.cfg.future_steps;
    let mut sums = vec![0.0; tf];
    let mut counts = vec![0usize; tf];
    for &scene_idx in &dataset.split_indices(split) {
        let scene = &dataset.scenes[scene_idx];
        let Some(batch) = Batch::collate(scene, predictor.cfg.history_steps, tf) else {
            continue;
        };
        let pred = predict_batch(predictor, store, batch)?;
        for (row, traj) in pred.trajectories.iter().enumerate() {
            for t in 0..tf {
                if pred.batch.fut_mask[t].data()[row] > 0.0 {
                    let truth = Point2::new(
                        pred.batch.fut_x[t].data()[row],
                        pred.batch.fut_y[t].data()[row],
                    );
                    sums[t] += traj[t].dist(truth);
                    counts[t] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(tf);
    for (t, (s, c)) in sums.iter().zip(&counts).enumerate() {
        if *c == 0 {
            return Err(ModelError::EmptySample(format!(
                "no valid samples at future step {}",
                t + 1
            )));
        }
        out.push(s / *c as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DataConfig};

    fn tiny_setup() -> (TrajectoryPredictor, ParamStore, Batch) {
        let cfg = DataConfig {
            scenes: 1,
            min_agents: 2,
            max_agents: 4,
            ..DataConfig::default()
        };
        let ds = generate_synthetic(&cfg, 5).unwrap();
        let batch = Batch::collate(&ds.scenes[0], 6, 8).unwrap();
        let mut store = ParamStore::new();
        let predictor = TrajectoryPredictor::init(PredictorConfig::default(), &mut store, 11);
        (predictor, store, batch)
    }

    #[test]
    fn untrained_forward_has_right_shapes_and_is_finite() {
        let (predictor, store, batch) = tiny_setup();
        let pred = predict_batch(&predictor, &store, batch).unwrap();
        assert_eq!(pred.trajectories.len(), pred.batch.len());
        for traj in &pred.trajectories {
            assert_eq!(traj.len(), 8);
            assert!(traj.iter().all(|p| p.is_finite()));
        }
        assert_eq!(pred.features.shape(), &[pred.batch.len(), 64]);
    }

    #[test]
    fn forward_is_deterministic() {
        let (predictor, store, batch) = tiny_setup();
        let a = predict_batch(&predictor, &store, batch.clone()).unwrap();
        let b = predict_batch(&predictor, &store, batch).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            for (pa, pb) in ta.iter().zip(tb) {
                assert_eq!(pa.x.to_bits(), pb.x.to_bits());
                assert_eq!(pa.y.to_bits(), pb.y.to_bits());
            }
        }
    }

    #[test]
    fn zero_history_gives_finite_outputs() {
        let (predictor, store, mut batch) = tiny_setup();
        for f in &mut batch.hist_feats {
            *f = Tensor::zeros(f.shape().to_vec());
        }
        let pred = predict_batch(&predictor, &store, batch).unwrap();
        assert!(pred.features.all_finite());
    }
}
