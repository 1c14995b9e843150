//! Central-difference gradient verification.

use super::AutodiffError;

/// Result of a gradient check: the worst relative error and where it was.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compare an analytic gradient against central finite differences.
///
/// `value_fn` evaluates the scalar function at an arbitrary point (it is
/// called at `point +/- h e_i` for every coordinate); `analytic` is the
/// gradient to verify at `point`. The relative error denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    value_fn: impl Fn(&[f64]) -> Result<f64, AutodiffError>,
    analytic: &[f64],
    point: &[f64],
    h: f64,
) -> Result<GradCheckReport, AutodiffError> {
    assert_eq!(analytic.len(), point.len(), "gradient/point length mismatch");
    let mut max_rel_err = 0.0_f64;
    let mut worst_index = 0;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = value_fn(&x)?;
        x[i] = orig - h;
        let fm = value_fn(&x)?;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    // Exercise one primitive through value + backward at random points.
    fn check_unary(
        name: &str,
        apply: impl Fn(&mut Tape, super::super::Var) -> Result<super::super::Var, AutodiffError>,
        domain: (f64, f64),
        tol: f64,
    ) {
        let mut rng = StdRng::seed_from_u64(0xC0FFEE);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let point: Vec<f64> = (0..n).map(|_| rng.gen_range(domain.0..domain.1)).collect();
            let value_fn = |p: &[f64]| -> Result<f64, AutodiffError> {
                let mut t = Tape::new();
                let x = t.leaf(Tensor::vector(p.to_vec()));
                let y = apply(&mut t, x)?;
                let s = t.sum(y)?;
                Ok(t.value(s).item())
            };
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(point.clone()));
            let y = apply(&mut t, x).unwrap();
            let s = t.sum(y).unwrap();
            let grads = t.backward(s).unwrap();
            let report = grad_check(value_fn, grads.get(x).data(), &point, 1e-6).unwrap();
            assert!(
                report.max_rel_err < tol,
                "{name}: rel err {} at coord {}",
                report.max_rel_err,
                report.worst_index
            );
        }
    }

    #[test]
    fn primitives_pass_grad_check() {
        check_unary("tanh", |t, x| t.tanh(x), (-3.0, 3.0), 1e-6);
        check_unary("sigmoid", |t, x| t.sigmoid(x), (-3.0, 3.0), 1e-6);
        check_unary("softplus", |t, x| t.softplus(x), (-3.0, 3.0), 1e-6);
        check_unary("exp", |t, x| t.exp(x), (-2.0, 2.0), 1e-6);
        check_unary("log", |t, x| t.log(x), (0.2, 4.0), 1e-6);
        check_unary("sqrt", |t, x| t.sqrt(x), (0.2, 4.0), 1e-6);
        check_unary("square", |t, x| t.square(x), (-3.0, 3.0), 1e-6);
        check_unary("sin", |t, x| t.sin(x), (-3.0, 3.0), 1e-6);
        check_unary("cos", |t, x| t.cos(x), (-3.0, 3.0), 1e-6);
        check_unary("neg", |t, x| t.neg(x), (-3.0, 3.0), 1e-6);
        check_unary("scale", |t, x| t.scale(x, 1.7), (-3.0, 3.0), 1e-6);
        check_unary("add_scalar", |t, x| t.add_scalar(x, 0.9), (-3.0, 3.0), 1e-6);
        check_unary("powf", |t, x| t.powf(x, 2.7), (0.3, 3.0), 1e-6);
        check_unary("mean", |t, x| t.mean(x), (-3.0, 3.0), 1e-6);
    }

    #[test]
    fn binary_and_structural_ops_pass_grad_check() {
        let mut rng = StdRng::seed_from_u64(0xBEEF);
        for _ in 0..100 {
            // Mix of elementwise binary, matmul, concat, slice, tiles: a
            // small composite function of a 12-value parameter vector.
            let point: Vec<f64> = (0..12).map(|_| rng.gen_range(0.2..1.8)).collect();
            let build = |p: &[f64]| -> Result<f64, AutodiffError> {
                let mut t = Tape::new();
                let x = t.leaf(Tensor::vector(p.to_vec()));
                let m = t.reshape(x, vec![3, 4])?;
                let a = t.slice_cols(m, 0, 2)?; // [3,2]
                let b = t.slice_cols(m, 2, 2)?; // [3,2]
                let prod = t.mul(a, b)?;
                let quot = t.div(a, b)?;
                let cat = t.concat_cols(&[prod, quot])?; // [3,4]
                let w = t.reshape(b, vec![2, 3])?;
                let mm = t.matmul(w, cat)?; // [2,4]
                let rs = t.row_sum(mm)?; // [2]
                let tiled = t.tile_cols(rs, 3)?; // [2,3]
                let tr = t.tile_rows(rs, 2)?; // [2,2]
                let flat1 = t.reshape(tiled, vec![6])?;
                let flat2 = t.reshape(tr, vec![4])?;
                let all = t.concat0(&[flat1, flat2])?;
                let sq = t.square(all)?;
                let s = t.mean(sq)?;
                Ok(t.value(s).item())
            };
            let grads = {
                let mut t = Tape::new();
                let x = t.leaf(Tensor::vector(point.clone()));
                let m = t.reshape(x, vec![3, 4]).unwrap();
                let a = t.slice_cols(m, 0, 2).unwrap();
                let b = t.slice_cols(m, 2, 2).unwrap();
                let prod = t.mul(a, b).unwrap();
                let quot = t.div(a, b).unwrap();
                let cat = t.concat_cols(&[prod, quot]).unwrap();
                let w = t.reshape(b, vec![2, 3]).unwrap();
                let mm = t.matmul(w, cat).unwrap();
                let rs = t.row_sum(mm).unwrap();
                let tiled = t.tile_cols(rs, 3).unwrap();
                let tr = t.tile_rows(rs, 2).unwrap();
                let flat1 = t.reshape(tiled, vec![6]).unwrap();
                let flat2 = t.reshape(tr, vec![4]).unwrap();
                let all = t.concat0(&[flat1, flat2]).unwrap();
                let sq = t.square(all).unwrap();
                let s = t.mean(sq).unwrap();
                let g = t.backward(s).unwrap();
                g.get(x).data().to_vec()
            };
            let report = grad_check(build, &grads, &point, 1e-6).unwrap();
            assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn masked_mean_grad_check() {
        let mut rng = StdRng::seed_from_u64(0xABCD);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 })
                .collect();
            let mask2 = mask.clone();
            let value_fn = move |p: &[f64]| -> Result<f64, AutodiffError> {
                let mut t = Tape::new();
                let v = t.leaf(Tensor::vector(p.to_vec()));
                let m = t.leaf(Tensor::vector(mask2.clone()));
                let sq = t.square(v)?;
                let y = t.masked_mean(sq, m)?;
                Ok(t.value(y).item())
            };
            let mut t = Tape::new();
            let v = t.leaf(Tensor::vector(point.clone()));
            let m = t.leaf(Tensor::vector(mask.clone()));
            let sq = t.square(v).unwrap();
            let y = t.masked_mean(sq, m).unwrap();
            let g = t.backward(y).unwrap();
            let report = grad_check(value_fn, g.get(v).data(), &point, 1e-6).unwrap();
            assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
        }
    }
}
