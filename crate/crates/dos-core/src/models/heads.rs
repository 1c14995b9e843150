//! Occupancy-set heads on top of the trajectory predictor.
//!
//! All heads share the same two-branch layout: the predictor's encoder
//! features are duplicated along the horizon and GRU-encoded (branch 1),
//! the predicted trajectory runs through a linear layer and a GRU
//! (branch 2), and a decoder GRU consumes the per-step feature
//! concatenation. Only the output dimension and its interpretation
//! differ between the set head, the Gaussian head, and the radius head.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{GruSpec, LinearSpec};
use super::params::{BoundParams, ParamStore};
use super::predictor::ScenePrediction;
use super::ModelError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::{wrap_orientation, EllipseSet, Point2};

/// Constraint family for the predicted ellipse orientation and axes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DosVariant {
    /// Equal axes, orientation fixed at zero.
    Circle,
    /// Free axes, orientation fixed at the given angle.
    FixedTheta(f64),
    /// Orientation from the agent's velocity direction at the anchor.
    V1CurrentVelocity,
    /// Orientation from the predicted displacement direction per step.
    V2PredictedVelocity,
    /// Axes and orientation all predicted.
    Free,
}

impl DosVariant {
    pub fn label(&self) -> String {
        match self {
            DosVariant::Circle => "dos_circle".into(),
            DosVariant::FixedTheta(t) => format!("dos_theta{:.3}", t),
            DosVariant::V1CurrentVelocity => "dos_v1".into(),
            DosVariant::V2PredictedVelocity => "dos_v2".into(),
            DosVariant::Free => "dos_free".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Dos,
    Gaussian,
    Radius,
}

impl HeadKind {
    fn out_dim(self) -> usize {
        match self {
            HeadKind::Dos => 3,
            HeadKind::Gaussian => 5,
            HeadKind::Radius => 1,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            HeadKind::Dos => "dos",
            HeadKind::Gaussian => "gauss",
            HeadKind::Radius => "radius",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden_dim: usize,
    pub traj_embed_dim: usize,
    /// Minimum full axis length of predicted sets, meters.
    pub min_axis_len: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden_dim: 32,
            traj_embed_dim: 16,
            min_axis_len: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoBranchHead {
    pub kind: HeadKind,
    pub cfg: HeadConfig,
    branch_feat: GruSpec,
    traj_embed: LinearSpec,
    branch_traj: GruSpec,
    decoder: GruSpec,
    output: LinearSpec,
}

impl TwoBranchHead {
    pub fn init(
        kind: HeadKind,
        cfg: HeadConfig,
        predictor_hidden: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = kind.prefix();
        let branch_feat = GruSpec::init(
            &format!("{p}.branch_feat"),
            predictor_hidden,
            cfg.hidden_dim,
            store,
            &mut rng,
        );
        let traj_embed =
            LinearSpec::init(&format!("{p}.traj_embed"), 2, cfg.traj_embed_dim, store, &mut rng);
        let branch_traj = GruSpec::init(
            &format!("{p}.branch_traj"),
            cfg.traj_embed_dim,
            cfg.hidden_dim,
            store,
            &mut rng,
        );
        let decoder = GruSpec::init(
            &format!("{p}.decoder"),
            2 * cfg.hidden_dim,
            cfg.hidden_dim,
            store,
            &mut rng,
        );
        let output = LinearSpec::init(
            &format!("{p}.out"),
            cfg.hidden_dim,
            kind.out_dim(),
            store,
            &mut rng,
        );
        TwoBranchHead {
            kind,
            cfg,
            branch_feat,
            traj_embed,
            branch_traj,
            decoder,
            output,
        }
    }

    pub fn attach(
        kind: HeadKind,
        cfg: HeadConfig,
        predictor_hidden: usize,
        store: &ParamStore,
    ) -> Result<Self, ModelError> {
        let p = kind.prefix();
        Ok(TwoBranchHead {
            kind,
            cfg,
            branch_feat: GruSpec::attach(
                &format!("{p}.branch_feat"),
                predictor_hidden,
                cfg.hidden_dim,
                store,
            )?,
            traj_embed: LinearSpec::attach(&format!("{p}.traj_embed"), 2, cfg.traj_embed_dim, store)?,
            branch_traj: GruSpec::attach(
                &format!("{p}.branch_traj"),
                cfg.traj_embed_dim,
                cfg.hidden_dim,
                store,
            )?,
            decoder: GruSpec::attach(
                &format!("{p}.decoder"),
                2 * cfg.hidden_dim,
                cfg.hidden_dim,
                store,
            )?,
            output: LinearSpec::attach(&format!("{p}.out"), cfg.hidden_dim, kind.out_dim(), store)?,
        })
    }

    pub fn param_prefix(&self) -> String {
        format!("{}.", self.kind.prefix())
    }

    /// Raw per-step outputs `[B, out_dim]` given the (usually detached)
    /// predictor features `[B, H]` and per-step trajectory x/y `[B]`.
    pub fn forward_raw(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        features: Var,
        yhat_x: &[Var],
        yhat_y: &[Var],
    ) -> Result<Vec<Var>, AutodiffError> {
        let b = tape.value(features).shape()[0];
        let tf = yhat_x.len();

        let mut h1 = self.branch_feat.initial_state(tape, b);
        let mut h2 = self.branch_traj.initial_state(tape, b);
        let mut enc1 = Vec::with_capacity(tf);
        let mut enc2 = Vec::with_capacity(tf);
        for t in 0..tf {
            h1 = self.branch_feat.step(tape, bound, features, h1, None)?;
            enc1.push(h1);
            let xr = tape.reshape(yhat_x[t], vec![b, 1])?;
            let yr = tape.reshape(yhat_y[t], vec![b, 1])?;
            let ycat = tape.concat_cols(&[xr, yr])?;
            let e_pre = self.traj_embed.forward(tape, bound, ycat)?;
            let e = tape.tanh(e_pre)?;
            h2 = self.branch_traj.step(tape, bound, e, h2, None)?;
            enc2.push(h2);
        }

        let mut dec = self.decoder.initial_state(tape, b);
        let mut raw = Vec::with_capacity(tf);
        for t in 0..tf {
            let joint = tape.concat_cols(&[enc1[t], enc2[t]])?;
            dec = self.decoder.step(tape, bound, joint, dec, None)?;
            raw.push(self.output.forward(tape, bound, dec)?);
        }
        Ok(raw)
    }
}

/// Per-step ellipse parameters on the tape. Orientation enters the loss
/// only through its cosine and sine, which are tape nodes for the free
/// variant and constants otherwise.
#[derive(Clone, Copy)]
pub struct DosStepVars {
    pub len_major: Var,
    pub len_minor: Var,
    pub cos_theta: Var,
    pub sin_theta: Var,
}

/// Interpret raw head outputs under a constraint variant.
///
/// Centers are always the predicted trajectory. For v1 the orientation
/// comes from `current_velocity`; for v2 from the predicted displacement
/// direction per step (falling back to the previous step's angle below
/// 1e-6 m displacement). Those directions are data, not gradients.
pub fn interpret_dos(
    tape: &mut Tape,
    raw: &[Var],
    variant: DosVariant,
    min_axis_len: f64,
    current_velocity: &[Point2],
    yhat: &[Vec<Point2>],
) -> Result<Vec<DosStepVars>, AutodiffError> {
    let tf = raw.len();
    let b = current_velocity.len();
    let mut steps = Vec::with_capacity(tf);

    // v2 falls back to the previous step's angle on degenerate segments.
    let mut prev_theta = vec![0.0_f64; b];

    for (t, raw_t) in raw.iter().enumerate() {
        let raw_l_m = tape.slice_cols(*raw_t, 0, 1)?;
        let raw_l = tape.reshape(raw_l_m, vec![b])?;
        let sp_l = tape.softplus(raw_l)?;
        let len_major = tape.add_scalar(sp_l, min_axis_len)?;

        let len_minor = if matches!(variant, DosVariant::Circle) {
            len_major
        } else {
            let raw_w_m = tape.slice_cols(*raw_t, 1, 1)?;
            let raw_w = tape.reshape(raw_w_m, vec![b])?;
            let sp_w = tape.softplus(raw_w)?;
            tape.add_scalar(sp_w, min_axis_len)?
        };

        let (cos_theta, sin_theta) = match variant {
            DosVariant::Circle => {
                let c = tape.leaf(Tensor::full(vec![b], 1.0));
                let s = tape.leaf(Tensor::full(vec![b], 0.0));
                (c, s)
            }
            DosVariant::FixedTheta(theta0) => {
                let c = tape.leaf(Tensor::full(vec![b], theta0.cos()));
                let s = tape.leaf(Tensor::full(vec![b], theta0.sin()));
                (c, s)
            }
            DosVariant::V1CurrentVelocity => {
                let thetas: Vec<f64> = current_velocity
                    .iter()
                    .map(|v| if v.norm() < 1e-6 { 0.0 } else { v.y.atan2(v.x) })
                    .collect();
                let c = tape.leaf(Tensor::vector(thetas.iter().map(|t| t.cos()).collect()));
                let s = tape.leaf(Tensor::vector(thetas.iter().map(|t| t.sin()).collect()));
                (c, s)
            }
            DosVariant::V2PredictedVelocity => {
                let mut thetas = Vec::with_capacity(b);
                for (row, traj) in yhat.iter().enumerate() {
                    let prev = if t == 0 { Point2::ORIGIN } else { traj[t - 1] };
                    let d = traj[t].sub(prev);
                    let theta = if d.norm() < 1e-6 {
                        prev_theta[row]
                    } else {
                        d.y.atan2(d.x)
                    };
                    prev_theta[row] = theta;
                    thetas.push(theta);
                }
                let c = tape.leaf(Tensor::vector(thetas.iter().map(|t| t.cos()).collect()));
                let s = tape.leaf(Tensor::vector(thetas.iter().map(|t| t.sin()).collect()));
                (c, s)
            }
            DosVariant::Free => {
                let raw_t_m = tape.slice_cols(*raw_t, 2, 1)?;
                let raw_theta = tape.reshape(raw_t_m, vec![b])?;
                let sig = tape.sigmoid(raw_theta)?;
                let theta = tape.scale(sig, std::f64::consts::PI)?;
                let c = tape.cos(theta)?;
                let s = tape.sin(theta)?;
                (c, s)
            }
        };

        steps.push(DosStepVars {
            len_major,
            len_minor,
            cos_theta,
            sin_theta,
        });
    }
    Ok(steps)
}

/// Extract concrete ellipses (agent frame) from interpreted step vars,
/// centered bit-exactly on the predicted trajectory.
pub fn dos_to_ellipses(
    tape: &Tape,
    steps: &[DosStepVars],
    yhat: &[Vec<Point2>],
) -> Vec<Vec<EllipseSet>> {
    let b = yhat.len();
    let mut out = vec![Vec::with_capacity(steps.len()); b];
    for (t, step) in steps.iter().enumerate() {
        let ls = tape.value(step.len_major).data();
        let ws = tape.value(step.len_minor).data();
        let cs = tape.value(step.cos_theta).data();
        let ss = tape.value(step.sin_theta).data();
        for (row, traj) in yhat.iter().enumerate() {
            let theta = wrap_orientation(ss[row].atan2(cs[row]));
            out[row].push(
                EllipseSet::new(traj[t], ls[row], ws[row], theta)
                    .expect("head activations keep axes positive"),
            );
        }
    }
    out
}

/// Per-step Gaussian parameters on the tape.
#[derive(Clone, Copy)]
pub struct GaussStepVars {
    pub mean_x: Var,
    pub mean_y: Var,
    pub sigma_x: Var,
    pub sigma_y: Var,
    pub rho: Var,
}

/// Interpret raw Gaussian-head outputs: the mean is the predicted
/// position plus an offset; sigmas are `1e-3 + exp(raw)` (about 1 m at
/// zero-initialized bias); the correlation is `0.99 tanh(raw)`.
pub fn interpret_gaussian(
    tape: &mut Tape,
    raw: &[Var],
    yhat_x: &[Var],
    yhat_y: &[Var],
) -> Result<Vec<GaussStepVars>, AutodiffError> {
    let mut steps = Vec::with_capacity(raw.len());
    for (t, raw_t) in raw.iter().enumerate() {
        let b = tape.value(*raw_t).shape()[0];
        let col = |tape: &mut Tape, c: usize| -> Result<Var, AutodiffError> {
            let m = tape.slice_cols(*raw_t, c, 1)?;
            tape.reshape(m, vec![b])
        };
        let off_x = col(tape, 0)?;
        let off_y = col(tape, 1)?;
        let ls_x = col(tape, 2)?;
        let ls_y = col(tape, 3)?;
        let raw_rho = col(tape, 4)?;

        let mean_x = tape.add(yhat_x[t], off_x)?;
        let mean_y = tape.add(yhat_y[t], off_y)?;
        let ex = tape.exp(ls_x)?;
        let sigma_x = tape.add_scalar(ex, 1e-3)?;
        let ey = tape.exp(ls_y)?;
        let sigma_y = tape.add_scalar(ey, 1e-3)?;
        let th = tape.tanh(raw_rho)?;
        let rho = tape.scale(th, 0.99)?;
        steps.push(GaussStepVars {
            mean_x,
            mean_y,
            sigma_x,
            sigma_y,
            rho,
        });
    }
    Ok(steps)
}

/// Concrete per-step (mean, covariance) pairs in the agent frame.
pub fn gaussian_to_moments(
    tape: &Tape,
    steps: &[GaussStepVars],
) -> Vec<Vec<(Point2, [[f64; 2]; 2])>> {
    let b = tape.value(steps[0].mean_x).numel();
    let mut out = vec![Vec::with_capacity(steps.len()); b];
    for step in steps {
        let mx = tape.value(step.mean_x).data();
        let my = tape.value(step.mean_y).data();
        let sx = tape.value(step.sigma_x).data();
        let sy = tape.value(step.sigma_y).data();
        let rho = tape.value(step.rho).data();
        for (row, agent) in out.iter_mut().enumerate() {
            let cxy = rho[row] * sx[row] * sy[row];
            agent.push((
                Point2::new(mx[row], my[row]),
                [[sx[row] * sx[row], cxy], [cxy, sy[row] * sy[row]]],
            ));
        }
    }
    out
}

/// Interpret raw radius-head outputs: `softplus` keeps radii positive.
pub fn interpret_radius(tape: &mut Tape, raw: &[Var]) -> Result<Vec<Var>, AutodiffError> {
    raw.iter()
        .map(|raw_t| {
            let b = tape.value(*raw_t).shape()[0];
            let m = tape.slice_cols(*raw_t, 0, 1)?;
            let v = tape.reshape(m, vec![b])?;
            tape.softplus(v)
        })
        .collect()
}

/// Convenience: run a head end-to-end on a frozen scene prediction,
/// returning the raw outputs' tape plus the leaf vars for truth terms.
pub struct HeadForward {
    pub tape: Tape,
    pub raw: Vec<Var>,
    pub yhat_x: Vec<Var>,
    pub yhat_y: Vec<Var>,
    pub bound: BoundParams,
}

pub fn head_forward_frozen(
    head: &TwoBranchHead,
    store: &ParamStore,
    pred: &ScenePrediction,
) -> Result<HeadForward, AutodiffError> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let features = tape.leaf(pred.features.clone());
    let tf = pred.batch.future_steps();
    let b = pred.batch.len();
    let mut yhat_x = Vec::with_capacity(tf);
    let mut yhat_y = Vec::with_capacity(tf);
    for t in 0..tf {
        let xs: Vec<f64> = (0..b).map(|r| pred.trajectories[r][t].x).collect();
        let ys: Vec<f64> = (0..b).map(|r| pred.trajectories[r][t].y).collect();
        yhat_x.push(tape.leaf(Tensor::vector(xs)));
        yhat_y.push(tape.leaf(Tensor::vector(ys)));
    }
    let raw = head.forward_raw(&mut tape, &bound, features, &yhat_x, &yhat_y)?;
    Ok(HeadForward {
        tape,
        raw,
        yhat_x,
        yhat_y,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DataConfig};
    use crate::models::batch::Batch;
    use crate::models::predictor::{predict_batch, PredictorConfig, TrajectoryPredictor};

    fn setup() -> (ParamStore, TwoBranchHead, ScenePrediction) {
        let ds = generate_synthetic(
            &DataConfig {
                scenes: 1,
                min_agents: 3,
                max_agents: 5,
                ..DataConfig::default()
            },
            3,
        )
        .unwrap();
        let mut store = ParamStore::new();
        let predictor = TrajectoryPredictor::init(PredictorConfig::default(), &mut store, 1);
        let head = TwoBranchHead::init(HeadKind::Dos, HeadConfig::default(), 64, &mut store, 2);
        let batch = Batch::collate(&ds.scenes[0], 6, 8).unwrap();
        let pred = predict_batch(&predictor, &store, batch).unwrap();
        (store, head, pred)
    }

    fn run_variant(
        store: &ParamStore,
        head: &TwoBranchHead,
        pred: &ScenePrediction,
        variant: DosVariant,
    ) -> (Tape, Vec<DosStepVars>) {
        let mut fwd = head_forward_frozen(head, store, pred).unwrap();
        let steps = interpret_dos(
            &mut fwd.tape,
            &fwd.raw,
            variant,
            head.cfg.min_axis_len,
            &pred.batch.current_velocity,
            &pred.trajectories,
        )
        .unwrap();
        (fwd.tape, steps)
    }

    #[test]
    fn circle_variant_has_equal_axes_and_zero_theta() {
        let (store, head, pred) = setup();
        let (tape, steps) = run_variant(&store, &head, &pred, DosVariant::Circle);
        let sets = dos_to_ellipses(&tape, &steps, &pred.trajectories);
        for agent in &sets {
            for e in agent {
                assert_eq!(e.major_len(), e.minor_len());
                assert_eq!(e.theta(), 0.0);
            }
        }
    }

    #[test]
    fn fixed_theta_variant_pins_orientation() {
        let (store, head, pred) = setup();
        let theta0 = std::f64::consts::PI / 4.0;
        let (tape, steps) = run_variant(&store, &head, &pred, DosVariant::FixedTheta(theta0));
        let sets = dos_to_ellipses(&tape, &steps, &pred.trajectories);
        for agent in &sets {
            for e in agent {
                // Canonicalization can flip by pi/2 when the axes swap.
                let d = (e.theta() - theta0).abs();
                assert!(
                    d < 1e-9 || (d - std::f64::consts::FRAC_PI_2).abs() < 1e-9,
                    "theta {}",
                    e.theta()
                );
            }
        }
    }

    #[test]
    fn v2_straight_line_gives_zero_theta() {
        let (store, head, mut pred) = setup();
        for traj in &mut pred.trajectories {
            for (t, p) in traj.iter_mut().enumerate() {
                *p = Point2::new((t + 1) as f64, 0.0);
            }
        }
        let (tape, steps) = run_variant(&store, &head, &pred, DosVariant::V2PredictedVelocity);
        let sets = dos_to_ellipses(&tape, &steps, &pred.trajectories);
        for agent in &sets {
            for e in agent {
                let d = e.theta().min(std::f64::consts::PI - e.theta());
                assert!(d < 1e-9 || (d - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn centers_equal_predicted_trajectory_bit_exact() {
        let (store, head, pred) = setup();
        let (tape, steps) = run_variant(&store, &head, &pred, DosVariant::Free);
        let sets = dos_to_ellipses(&tape, &steps, &pred.trajectories);
        for (row, agent) in sets.iter().enumerate() {
            for (t, e) in agent.iter().enumerate() {
                assert_eq!(e.center().x.to_bits(), pred.trajectories[row][t].x.to_bits());
                assert_eq!(e.center().y.to_bits(), pred.trajectories[row][t].y.to_bits());
            }
        }
    }

    #[test]
    fn activation_ranges_hold_for_extreme_raw_inputs() {
        // Feed raw values at the contract bounds straight through the
        // activation mapping.
        let min_len = 0.1;
        for raw in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::vector(vec![raw]));
            let sp = tape.softplus(x).unwrap();
            let l = tape.add_scalar(sp, min_len).unwrap();
            let lv = tape.value(l).item();
            assert!(lv >= min_len && lv.is_finite());
            let sig = tape.sigmoid(x).unwrap();
            let theta = tape.scale(sig, std::f64::consts::PI).unwrap();
            let tv = tape.value(theta).item();
            assert!((0.0..std::f64::consts::PI).contains(&tv) || tv == std::f64::consts::PI);
        }
    }

    #[test]
    fn gaussian_head_initial_sigma_near_one() {
        let ds = generate_synthetic(
            &DataConfig {
                scenes: 1,
                min_agents: 2,
                max_agents: 3,
                ..DataConfig::default()
            },
            9,
        )
        .unwrap();
        let mut store = ParamStore::new();
        let predictor = TrajectoryPredictor::init(PredictorConfig::default(), &mut store, 1);
        let head = TwoBranchHead::init(HeadKind::Gaussian, HeadConfig::default(), 64, &mut store, 2);
        let batch = Batch::collate(&ds.scenes[0], 6, 8).unwrap();
        let pred = predict_batch(&predictor, &store, batch).unwrap();
        let mut fwd = head_forward_frozen(&head, &store, &pred).unwrap();
        let steps = interpret_gaussian(&mut fwd.tape, &fwd.raw, &fwd.yhat_x, &fwd.yhat_y).unwrap();
        let moments = gaussian_to_moments(&fwd.tape, &steps);
        for agent in &moments {
            for (_, cov) in agent {
                // raw outputs at init are small, so sigma ~ 1 m.
                assert!((cov[0][0].sqrt() - 1.0).abs() < 0.5);
                assert!((cov[1][1].sqrt() - 1.0).abs() < 0.5);
            }
        }
    }

    #[test]
    fn radius_head_is_strictly_positive() {
        let ds = generate_synthetic(
            &DataConfig {
                scenes: 1,
                ..DataConfig::default()
            },
            13,
        )
        .unwrap();
        let mut store = ParamStore::new();
        let predictor = TrajectoryPredictor::init(PredictorConfig::default(), &mut store, 1);
        let head = TwoBranchHead::init(HeadKind::Radius, HeadConfig::default(), 64, &mut store, 2);
        let batch = Batch::collate(&ds.scenes[0], 6, 8).unwrap();
        let pred = predict_batch(&predictor, &store, batch).unwrap();
        let mut fwd = head_forward_frozen(&head, &store, &pred).unwrap();
        let radii = interpret_radius(&mut fwd.tape, &fwd.raw).unwrap();
        for r in &radii {
            assert!(fwd.tape.value(*r).data().iter().all(|v| *v > 0.0));
        }
    }
}
