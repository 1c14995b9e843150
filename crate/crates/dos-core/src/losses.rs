//! Training objectives: the combined set-prediction loss (coverage plus
//! weighted area), trajectory MSE, Gaussian negative log-likelihood, and
//! error regression. Everything reduces through a single masked mean
//! over all valid (agent, step) pairs, so masked steps contribute
//! exactly zero value and zero gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::models::{Batch, DosStepVars, GaussStepVars, PredictorForward, ScenePrediction};

/// Weights of the combined objective `L = L_c + k * L_a` and the
/// out-of-set penalty `d^alpha + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            k: 0.1,
            alpha: 3.0,
            beta: 0.0,
        }
    }
}

/// Mahalanobis distance of `(dx, dy)` from an ellipse step, on the tape.
/// A tiny epsilon under the radical keeps the gradient finite at the
/// center.
pub fn mahalanobis_var(
    tape: &mut Tape,
    step: &DosStepVars,
    dx: Var,
    dy: Var,
) -> Result<Var, AutodiffError> {
    let dxc = tape.mul(dx, step.cos_theta)?;
    let dys = tape.mul(dy, step.sin_theta)?;
    let rot_x = tape.add(dxc, dys)?;
    let dxs = tape.mul(dx, step.sin_theta)?;
    let dyc = tape.mul(dy, step.cos_theta)?;
    let rot_y = tape.sub(dyc, dxs)?;

    let a = tape.scale(step.len_major, 0.5)?;
    let b = tape.scale(step.len_minor, 0.5)?;
    let nx = tape.div(rot_x, a)?;
    let ny = tape.div(rot_y, b)?;
    let nx2 = tape.square(nx)?;
    let ny2 = tape.square(ny)?;
    let d2 = tape.add(nx2, ny2)?;
    let d2e = tape.add_scalar(d2, 1e-12)?;
    tape.sqrt(d2e)
}

/// Coverage loss: masked mean of `d_M` inside the set and
/// `d_M^alpha + beta` outside. The inside/outside split is decided from
/// forward values, so the kink at `d_M = 1` is handled piecewise.
pub fn coverage_loss(
    tape: &mut Tape,
    steps: &[DosStepVars],
    delta_x: &[Var],
    delta_y: &[Var],
    masks: &[Var],
    alpha: f64,
    beta: f64,
) -> Result<Var, AutodiffError> {
    let mut per_step = Vec::with_capacity(steps.len());
    let mut mask_vars = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let dm = mahalanobis_var(tape, step, delta_x[t], delta_y[t])?;
        let inside: Vec<f64> = tape
            .value(dm)
            .data()
            .iter()
            .map(|d| if *d <= 1.0 { 1.0 } else { 0.0 })
            .collect();
        let outside: Vec<f64> = inside.iter().map(|s| 1.0 - s).collect();
        let s_in = tape.leaf(Tensor::vector(inside));
        let s_out = tape.leaf(Tensor::vector(outside));
        let pen_pow = tape.powf(dm, alpha)?;
        let pen = tape.add_scalar(pen_pow, beta)?;
        let in_part = tape.mul(s_in, dm)?;
        let out_part = tape.mul(s_out, pen)?;
        per_step.push(tape.add(in_part, out_part)?);
        mask_vars.push(masks[t]);
    }
    let values = tape.concat0(&per_step)?;
    let mask = tape.concat0(&mask_vars)?;
    tape.masked_mean(values, mask)
}

/// Area loss: masked mean of `(pi/4) * l * w`.
pub fn area_loss(
    tape: &mut Tape,
    steps: &[DosStepVars],
    masks: &[Var],
) -> Result<Var, AutodiffError> {
    let mut per_step = Vec::with_capacity(steps.len());
    for step in steps {
        per_step.push(tape.mul(step.len_major, step.len_minor)?);
    }
    let values = tape.concat0(&per_step)?;
    let mask = tape.concat0(masks)?;
    let mean = tape.masked_mean(values, mask)?;
    tape.scale(mean, std::f64::consts::PI / 4.0)
}

/// `L = L_c + k * L_a`.
pub fn total_loss(tape: &mut Tape, coverage: Var, area: Var, k: f64) -> Result<Var, AutodiffError> {
    let ka = tape.scale(area, k)?;
    tape.add(coverage, ka)
}

/// Masked mean negative log-likelihood of bivariate Gaussians.
pub fn gaussian_nll(
    tape: &mut Tape,
    steps: &[GaussStepVars],
    truth_x: &[Var],
    truth_y: &[Var],
    masks: &[Var],
) -> Result<Var, AutodiffError> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut per_step = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let dx = tape.sub(truth_x[t], step.mean_x)?;
        let dy = tape.sub(truth_y[t], step.mean_y)?;
        let zx = tape.div(dx, step.sigma_x)?;
        let zy = tape.div(dy, step.sigma_y)?;
        let rho2 = tape.square(step.rho)?;
        let neg_rho2 = tape.neg(rho2)?;
        let one_m = tape.add_scalar(neg_rho2, 1.0)?;

        let zx2 = tape.square(zx)?;
        let zy2 = tape.square(zy)?;
        let zxy = tape.mul(zx, zy)?;
        let cross_r = tape.mul(zxy, step.rho)?;
        let cross = tape.scale(cross_r, 2.0)?;
        let sum_z = tape.add(zx2, zy2)?;
        let q_num = tape.sub(sum_z, cross)?;
        let q = tape.div(q_num, one_m)?;

        let root = tape.sqrt(one_m)?;
        let sxsy = tape.mul(step.sigma_x, step.sigma_y)?;
        let norm = tape.mul(sxsy, root)?;
        let norm2pi = tape.scale(norm, two_pi)?;
        let log_norm = tape.log(norm2pi)?;
        let half_q = tape.scale(q, 0.5)?;
        per_step.push(tape.add(log_norm, half_q)?);
    }
    let values = tape.concat0(&per_step)?;
    let mask = tape.concat0(masks)?;
    tape.masked_mean(values, mask)
}

/// Masked mean squared difference between predicted radii and actual
/// prediction errors.
pub fn error_regression_loss(
    tape: &mut Tape,
    radii: &[Var],
    errors: &[Var],
    masks: &[Var],
) -> Result<Var, AutodiffError> {
    let mut per_step = Vec::with_capacity(radii.len());
    for (t, r) in radii.iter().enumerate() {
        let d = tape.sub(*r, errors[t])?;
        per_step.push(tape.square(d)?);
    }
    let values = tape.concat0(&per_step)?;
    let mask = tape.concat0(masks)?;
    tape.masked_mean(values, mask)
}

/// Masked mean of per-step squared Euclidean position error.
pub fn trajectory_mse(
    tape: &mut Tape,
    pos_x: &[Var],
    pos_y: &[Var],
    truth_x: &[Var],
    truth_y: &[Var],
    masks: &[Var],
) -> Result<Var, AutodiffError> {
    let mut per_step = Vec::with_capacity(pos_x.len());
    for t in 0..pos_x.len() {
        let ex = tape.sub(pos_x[t], truth_x[t])?;
        let ey = tape.sub(pos_y[t], truth_y[t])?;
        let ex2 = tape.square(ex)?;
        let ey2 = tape.square(ey)?;
        per_step.push(tape.add(ex2, ey2)?);
    }
    let values = tape.concat0(&per_step)?;
    let mask = tape.concat0(masks)?;
    tape.masked_mean(values, mask)
}

// --- convenience wrappers used by the training loops ---

/// Leaf vars for a batch's truth/mask tensors.
pub struct BatchTargets {
    pub truth_x: Vec<Var>,
    pub truth_y: Vec<Var>,
    pub mask: Vec<Var>,
}

pub fn leaf_targets(tape: &mut Tape, batch: &Batch) -> BatchTargets {
    BatchTargets {
        truth_x: batch.fut_x.iter().map(|t| tape.leaf(t.clone())).collect(),
        truth_y: batch.fut_y.iter().map(|t| tape.leaf(t.clone())).collect(),
        mask: batch.fut_mask.iter().map(|t| tape.leaf(t.clone())).collect(),
    }
}

pub fn trajectory_training_loss(
    tape: &mut Tape,
    fwd: &PredictorForward,
    batch: &Batch,
) -> Result<Var, AutodiffError> {
    let targets = leaf_targets(tape, batch);
    trajectory_mse(
        tape,
        &fwd.pos_x,
        &fwd.pos_y,
        &targets.truth_x,
        &targets.truth_y,
        &targets.mask,
    )
}

pub struct DosLossVars {
    pub total: Var,
    pub coverage: Var,
    pub area: Var,
}

/// Coverage deltas (truth minus predicted center) for a frozen
/// prediction, as constants.
pub fn frozen_deltas(tape: &mut Tape, pred: &ScenePrediction) -> (Vec<Var>, Vec<Var>) {
    let tf = pred.batch.future_steps();
    let b = pred.batch.len();
    let mut dx = Vec::with_capacity(tf);
    let mut dy = Vec::with_capacity(tf);
    for t in 0..tf {
        let xs: Vec<f64> = (0..b)
            .map(|r| pred.batch.fut_x[t].data()[r] - pred.trajectories[r][t].x)
            .collect();
        let ys: Vec<f64> = (0..b)
            .map(|r| pred.batch.fut_y[t].data()[r] - pred.trajectories[r][t].y)
            .collect();
        dx.push(tape.leaf(Tensor::vector(xs)));
        dy.push(tape.leaf(Tensor::vector(ys)));
    }
    (dx, dy)
}

pub fn dos_training_loss(
    tape: &mut Tape,
    steps: &[DosStepVars],
    pred: &ScenePrediction,
    cfg: &LossConfig,
) -> Result<DosLossVars, AutodiffError> {
    let (dx, dy) = frozen_deltas(tape, pred);
    let masks: Vec<Var> = pred
        .batch
        .fut_mask
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let coverage = coverage_loss(tape, steps, &dx, &dy, &masks, cfg.alpha, cfg.beta)?;
    let area = area_loss(tape, steps, &masks)?;
    let total = total_loss(tape, coverage, area, cfg.k)?;
    Ok(DosLossVars {
        total,
        coverage,
        area,
    })
}

/// Per-step prediction error magnitudes for the radius regression.
pub fn frozen_errors(tape: &mut Tape, pred: &ScenePrediction) -> Vec<Var> {
    let tf = pred.batch.future_steps();
    let b = pred.batch.len();
    (0..tf)
        .map(|t| {
            let es: Vec<f64> = (0..b)
                .map(|r| {
                    let dx = pred.batch.fut_x[t].data()[r] - pred.trajectories[r][t].x;
                    let dy = pred.batch.fut_y[t].data()[r] - pred.trajectories[r][t].y;
                    dx.hypot(dy)
                })
                .collect();
            tape.leaf(Tensor::vector(es))
        })
        .collect()
}
