//! The two-stage training protocol.
//!
//! Stage 1 trains the trajectory predictor on masked MSE. Stage 2
//! freezes it (the optimizer never touches `traj.*` parameters, and the
//! head consumes detached predictor outputs) and trains a head on its
//! objective: the combined coverage/area loss for set heads, negative
//! log-likelihood for the Gaussian head, error regression for the
//! radius head. Batches are one scene's valid agents, visited in a
//! seeded permutation per epoch; everything is bit-reproducible from
//! `(seed, config, dataset)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{Dataset, Split};
use crate::losses::{
    self, dos_training_loss, gaussian_nll, leaf_targets, trajectory_training_loss, LossConfig,
};
use crate::models::{
    head_forward_frozen, interpret_dos, interpret_gaussian, interpret_radius, predict_batch,
    Batch, DosVariant, HeadKind, ParamStore, ScenePrediction, TrajectoryPredictor, TwoBranchHead,
};

use super::adam::{adam_step, lr_at, AdamState};
use super::TrainError;

/// Common optimization settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_gamma: f64,
    pub lr_period: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_gamma: 0.5,
            lr_period: 100,
            epochs: 60,
            seed: 42,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "lr_gamma must be in (0, 1], got {}",
                self.lr_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Coverage and area components; zero for stage-1 curves.
    pub coverage: f64,
    pub area: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub store: ParamStore,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// True when training aborted on a numeric failure; `store` then
    /// holds the last good checkpoint.
    pub diverged: bool,
}

fn collate_split(dataset: &Dataset, split: Split, th: usize, tf: usize) -> Vec<Batch> {
    dataset
        .split_indices(split)
        .into_iter()
        .filter_map(|i| Batch::collate(&dataset.scenes[i], th, tf))
        .collect()
}

fn shuffled(order: &mut Vec<usize>, rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Stage 1: trajectory predictor on masked MSE.
pub fn train_stage1(
    predictor: &TrajectoryPredictor,
    mut store: ParamStore,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let th = predictor.cfg.history_steps;
    let tf = predictor.cfg.future_steps;
    let train = collate_split(dataset, Split::Train, th, tf);
    let val = collate_split(dataset, Split::Val, th, tf);
    if train.is_empty() {
        return Err(TrainError::InvalidConfig("train split produced no batches".into()));
    }

    let frozen = vec![false; store.len()];
    let mut state = AdamState::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = store.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr, cfg.lr_gamma, cfg.lr_period);
        shuffled(&mut order, &mut rng);
        let mut train_sum = 0.0;
        for &bi in &order {
            let batch = &train[bi];
            let result = (|| -> Result<f64, AutodiffError> {
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape);
                let fwd = predictor.forward(&mut tape, &bound, batch)?;
                let loss = trajectory_training_loss(&mut tape, &fwd, batch)?;
                let value = tape.value(loss).item();
                let mut grads = tape.backward(loss)?;
                let per_param: Vec<Option<Tensor>> = (0..store.len())
                    .map(|i| bound.get(i).map(|v| grads.take(v)))
                    .collect();
                adam_step(&mut store, &per_param, &mut state, lr, &frozen)
                    .map_err(|_| AutodiffError::NonFinite { op: "adam", node: 0 })?;
                Ok(value)
            })();
            match result {
                Ok(v) => train_sum += v,
                Err(_) => {
                    diverged = true;
                    break 'epochs;
                }
            }
        }
        let train_loss = train_sum / train.len() as f64;
        let val_loss = match stage1_val_loss(predictor, &store, &val) {
            Ok(v) => v,
            Err(_) => {
                diverged = true;
                break 'epochs;
            }
        };
        curve.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            coverage: 0.0,
            area: 0.0,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = store.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome {
        store: best,
        curve,
        best_epoch,
        best_val_loss: best_val,
        diverged,
    })
}

fn stage1_val_loss(
    predictor: &TrajectoryPredictor,
    store: &ParamStore,
    val: &[Batch],
) -> Result<f64, AutodiffError> {
    if val.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut sum = 0.0;
    for batch in val {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let fwd = predictor.forward(&mut tape, &bound, batch)?;
        let loss = trajectory_training_loss(&mut tape, &fwd, batch)?;
        sum += tape.value(loss).item();
    }
    Ok(sum / val.len() as f64)
}

/// What a frozen-predictor head trains against.
#[derive(Debug, Clone, Copy)]
pub enum HeadObjective {
    Dos(DosVariant),
    Gaussian,
    Radius,
}

impl HeadObjective {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadObjective::Dos(_) => HeadKind::Dos,
            HeadObjective::Gaussian => HeadKind::Gaussian,
            HeadObjective::Radius => HeadKind::Radius,
        }
    }
}

/// Stage 2 (and the learned baselines): train a head against a frozen
/// predictor. Returns the best-validation parameters and asserts that
/// the predictor hash is unchanged.
pub fn train_head(
    head: &TwoBranchHead,
    objective: HeadObjective,
    predictor: &TrajectoryPredictor,
    mut store: ParamStore,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let th = predictor.cfg.history_steps;
    let tf = predictor.cfg.future_steps;
    let hash_before = store.hash_prefix(TrajectoryPredictor::param_prefix());

    // The predictor is frozen, so its outputs are computed once.
    let predict_all = |split: Split| -> Result<Vec<ScenePrediction>, TrainError> {
        let mut out = Vec::new();
        for i in dataset.split_indices(split) {
            if let Some(batch) = Batch::collate(&dataset.scenes[i], th, tf) {
                out.push(predict_batch(predictor, &store, batch).map_err(TrainError::Autodiff)?);
            }
        }
        Ok(out)
    };
    let train = predict_all(Split::Train)?;
    let val = predict_all(Split::Val)?;
    if train.is_empty() {
        return Err(TrainError::InvalidConfig("train split produced no batches".into()));
    }

    let head_prefix = head.param_prefix();
    let frozen: Vec<bool> = (0..store.len())
        .map(|i| !store.name(i).starts_with(&head_prefix))
        .collect();
    let mut state = AdamState::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = store.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr, cfg.lr_gamma, cfg.lr_period);
        shuffled(&mut order, &mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        for &bi in &order {
            let pred = &train[bi];
            match head_batch_loss(head, objective, &store, pred, &cfg.loss, true) {
                Ok((value, coverage, area, grads)) => {
                    sums.0 += value;
                    sums.1 += coverage;
                    sums.2 += area;
                    if let Err(e) =
                        adam_step(&mut store, &grads.unwrap(), &mut state, lr, &frozen)
                    {
                        let _ = e;
                        diverged = true;
                        break 'epochs;
                    }
                }
                Err(_) => {
                    diverged = true;
                    break 'epochs;
                }
            }
        }
        let n = train.len() as f64;
        let mut val_sum = 0.0;
        for pred in &val {
            match head_batch_loss(head, objective, &store, pred, &cfg.loss, false) {
                Ok((value, _, _, _)) => val_sum += value,
                Err(_) => {
                    diverged = true;
                    break 'epochs;
                }
            }
        }
        let val_loss = if val.is_empty() {
            f64::INFINITY
        } else {
            val_sum / val.len() as f64
        };
        curve.push(EpochStats {
            epoch,
            lr,
            train_loss: sums.0 / n,
            val_loss,
            coverage: sums.1 / n,
            area: sums.2 / n,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = store.clone();
            best_epoch = epoch;
        }
    }

    let hash_after = best.hash_prefix(TrajectoryPredictor::param_prefix());
    assert_eq!(
        hash_before, hash_after,
        "frozen trajectory predictor parameters changed during head training"
    );
    Ok(TrainOutcome {
        store: best,
        curve,
        best_epoch,
        best_val_loss: best_val,
        diverged,
    })
}

type HeadLoss = (f64, f64, f64, Option<Vec<Option<Tensor>>>);

fn head_batch_loss(
    head: &TwoBranchHead,
    objective: HeadObjective,
    store: &ParamStore,
    pred: &ScenePrediction,
    loss_cfg: &LossConfig,
    with_grads: bool,
) -> Result<HeadLoss, AutodiffError> {
    let mut fwd = head_forward_frozen(head, store, pred)?;
    let tape = &mut fwd.tape;
    let (loss, coverage, area) = match objective {
        HeadObjective::Dos(variant) => {
            let steps = interpret_dos(
                tape,
                &fwd.raw,
                variant,
                head.cfg.min_axis_len,
                &pred.batch.current_velocity,
                &pred.trajectories,
            )?;
            let parts = dos_training_loss(tape, &steps, pred, loss_cfg)?;
            (
                parts.total,
                tape.value(parts.coverage).item(),
                tape.value(parts.area).item(),
            )
        }
        HeadObjective::Gaussian => {
            let steps = interpret_gaussian(tape, &fwd.raw, &fwd.yhat_x, &fwd.yhat_y)?;
            let targets = leaf_targets(tape, &pred.batch);
            let nll = gaussian_nll(
                tape,
                &steps,
                &targets.truth_x,
                &targets.truth_y,
                &targets.mask,
            )?;
            (nll, 0.0, 0.0)
        }
        HeadObjective::Radius => {
            let radii = interpret_radius(tape, &fwd.raw)?;
            let errors = losses::frozen_errors(tape, pred);
            let masks: Vec<_> = pred
                .batch
                .fut_mask
                .iter()
                .map(|t| tape.leaf(t.clone()))
                .collect();
            let loss = losses::error_regression_loss(tape, &radii, &errors, &masks)?;
            (loss, 0.0, 0.0)
        }
    };
    let value = tape.value(loss).item();
    let grads = if with_grads {
        let mut g = tape.backward(loss)?;
        Some(
            (0..store.len())
                .map(|i| fwd.bound.get(i).map(|v| g.take(v)))
                .collect(),
        )
    } else {
        None
    };
    Ok((value, coverage, area, grads))
}
