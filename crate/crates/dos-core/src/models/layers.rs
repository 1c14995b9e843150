//! Linear and GRU building blocks on the tape.
//!
//! A `*Spec` owns parameter indices into a [`ParamStore`]; forwarding
//! goes through [`BoundParams`] so a fresh tape can be used per batch.
//! Weights initialize uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
//! biases at zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use super::ModelError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[derive(Debug, Clone)]
pub struct LinearSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    w: usize,
    b: usize,
}

impl LinearSpec {
    pub fn init(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), uniform_init(rng, in_dim, out_dim, in_dim));
        let b = store.add(&format!("{name}.b"), Tensor::vector(vec![0.0; out_dim]));
        LinearSpec { in_dim, out_dim, w, b }
    }

    pub fn attach(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        store: &ParamStore,
    ) -> Result<Self, ModelError> {
        let w = store.expect(&format!("{name}.w"), &[in_dim, out_dim])?;
        let b = store.expect(&format!("{name}.b"), &[out_dim])?;
        Ok(LinearSpec { in_dim, out_dim, w, b })
    }

    /// `x W + b` for `x: [B, in_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let rows = tape.value(x).shape()[0];
        let xw = tape.matmul(x, bound.var(self.w))?;
        let bias = tape.tile_rows(bound.var(self.b), rows)?;
        tape.add(xw, bias)
    }
}

#[derive(Debug, Clone)]
pub struct GruSpec {
    pub in_dim: usize,
    pub hidden: usize,
    wx: usize,
    wh: usize,
    bx: usize,
    bh: usize,
}

impl GruSpec {
    pub fn init(
        name: &str,
        in_dim: usize,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let wx = store.add(
            &format!("{name}.wx"),
            uniform_init(rng, in_dim, 3 * hidden, in_dim),
        );
        let wh = store.add(
            &format!("{name}.wh"),
            uniform_init(rng, hidden, 3 * hidden, hidden),
        );
        let bx = store.add(&format!("{name}.bx"), Tensor::vector(vec![0.0; 3 * hidden]));
        let bh = store.add(&format!("{name}.bh"), Tensor::vector(vec![0.0; 3 * hidden]));
        GruSpec { in_dim, hidden, wx, wh, bx, bh }
    }

    pub fn attach(
        name: &str,
        in_dim: usize,
        hidden: usize,
        store: &ParamStore,
    ) -> Result<Self, ModelError> {
        let wx = store.expect(&format!("{name}.wx"), &[in_dim, 3 * hidden])?;
        let wh = store.expect(&format!("{name}.wh"), &[hidden, 3 * hidden])?;
        let bx = store.expect(&format!("{name}.bx"), &[3 * hidden])?;
        let bh = store.expect(&format!("{name}.bh"), &[3 * hidden])?;
        Ok(GruSpec { in_dim, hidden, wx, wh, bx, bh })
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Var {
        tape.leaf(Tensor::zeros(vec![batch, self.hidden]))
    }

    /// One GRU step. With a mask `m` (constant `[B, hidden]` of 0/1), the
    /// state only advances on masked-in rows: `h + m * (h' - h)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        h: Var,
        mask: Option<Var>,
    ) -> Result<Var, AutodiffError> {
        let hd = self.hidden;
        let rows = tape.value(x).shape()[0];
        let xw = tape.matmul(x, bound.var(self.wx))?;
        let bx = tape.tile_rows(bound.var(self.bx), rows)?;
        let gi = tape.add(xw, bx)?;
        let hw = tape.matmul(h, bound.var(self.wh))?;
        let bh = tape.tile_rows(bound.var(self.bh), rows)?;
        let gh = tape.add(hw, bh)?;

        let gi_r = tape.slice_cols(gi, 0, hd)?;
        let gi_z = tape.slice_cols(gi, hd, hd)?;
        let gi_n = tape.slice_cols(gi, 2 * hd, hd)?;
        let gh_r = tape.slice_cols(gh, 0, hd)?;
        let gh_z = tape.slice_cols(gh, hd, hd)?;
        let gh_n = tape.slice_cols(gh, 2 * hd, hd)?;

        let r_pre = tape.add(gi_r, gh_r)?;
        let r = tape.sigmoid(r_pre)?;
        let z_pre = tape.add(gi_z, gh_z)?;
        let z = tape.sigmoid(z_pre)?;
        let rn = tape.mul(r, gh_n)?;
        let n_pre = tape.add(gi_n, rn)?;
        let n = tape.tanh(n_pre)?;

        // h' = n + z * (h - n)
        let hmn = tape.sub(h, n)?;
        let zh = tape.mul(z, hmn)?;
        let h_new = tape.add(n, zh)?;

        match mask {
            Some(m) => {
                let delta = tape.sub(h_new, h)?;
                let md = tape.mul(m, delta)?;
                tape.add(h, md)
            }
            None => Ok(h_new),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn masked_step_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = GruSpec::init("g", 3, 4, &mut store, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
        let h0 = tape.leaf(Tensor::matrix(2, 4, vec![0.1; 8]).unwrap());
        // Row 0 masked out, row 1 advances.
        let m = tape.leaf(Tensor::matrix(2, 4, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap());
        let h1 = gru.step(&mut tape, &bound, x, h0, Some(m)).unwrap();
        let out = tape.value(h1).data();
        assert_eq!(&out[0..4], &[0.1; 4]);
        assert!(out[4..8].iter().any(|v| (v - 0.1).abs() > 1e-6));
    }

    #[test]
    fn gru_step_passes_grad_check() {
        // Gradient of a composed GRU step w.r.t. every parameter.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gru = GruSpec::init("g", 2, 3, &mut store, &mut rng);

        let flat: Vec<f64> = store.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let rebuild = |p: &[f64]| {
            let mut s = ParamStore::new();
            let mut offset = 0;
            for (name, t) in store.iter() {
                let n = t.numel();
                s.add(
                    name,
                    Tensor::new(t.shape().to_vec(), p[offset..offset + n].to_vec()).unwrap(),
                );
                offset += n;
            }
            s
        };
        let run = |p: &[f64]| -> Result<f64, AutodiffError> {
            let s = rebuild(p);
            let mut tape = Tape::new();
            let bound = s.bind(&mut tape);
            let x = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.4]).unwrap());
            let h0 = tape.leaf(Tensor::matrix(2, 3, vec![0.2, -0.1, 0.5, 0.0, 0.3, -0.4]).unwrap());
            let h1 = gru.step(&mut tape, &bound, x, h0, None)?;
            let sq = tape.square(h1)?;
            let loss = tape.mean(sq)?;
            Ok(tape.value(loss).item())
        };

        let analytic = {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.4]).unwrap());
            let h0 = tape.leaf(Tensor::matrix(2, 3, vec![0.2, -0.1, 0.5, 0.0, 0.3, -0.4]).unwrap());
            let h1 = gru.step(&mut tape, &bound, x, h0, None).unwrap();
            let sq = tape.square(h1).unwrap();
            let loss = tape.mean(sq).unwrap();
            let grads = tape.backward(loss).unwrap();
            (0..store.len())
                .flat_map(|i| grads.get(bound.var(i)).data().to_vec())
                .collect::<Vec<_>>()
        };

        let report = grad_check(run, &analytic, &flat, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-5, "rel err {}", report.max_rel_err);
    }
}
