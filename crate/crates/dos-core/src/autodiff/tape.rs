//! The recording tape and its primitives.

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Concat0(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols { input: usize, start: usize, len: usize },
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Sin(usize),
    Cos(usize),
    Neg(usize),
    Scale { input: usize, c: f64 },
    AddScalar(usize),
    PowConst { input: usize, p: f64 },
    TileRows { input: usize, rows: usize },
    TileCols { input: usize, cols: usize },
    RowSum(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    MaskedMean { values: usize, mask: usize },
}

/// Append-only record of primitives plus the value of every node.
///
/// A tape is single-owner during construction; independent tapes can run
/// on separate threads.
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Insert a leaf (parameter, input, or constant). Leaves have no
    /// inputs; backward stops at them.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.ops.push(Op::Leaf);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, op: &'static str, node: Op, value: Tensor) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite {
                op,
                node: self.values.len(),
            });
        }
        self.ops.push(node);
        self.values.push(value);
        Ok(Var(self.values.len() - 1))
    }

    // --- elementwise binary ops (scalar broadcast on either side) ---

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<Var, AutodiffError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let out = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| f(*x, *y))
                .collect();
            Tensor::new(va.shape().to_vec(), data).unwrap()
        } else if vb.is_scalar() {
            let s = vb.item();
            Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x, s)).collect())
                .unwrap()
        } else if va.is_scalar() {
            let s = va.item();
            Tensor::new(vb.shape().to_vec(), vb.data().iter().map(|y| f(s, *y)).collect())
                .unwrap()
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        };
        self.push(name, make(a.0, b.0), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    // --- matmul ---

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let (m, k) = va.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "matmul",
            detail: format!("lhs must be rank-2, got {:?}", va.shape()),
        })?;
        let (k2, n) = vb.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "matmul",
            detail: format!("rhs must be rank-2, got {:?}", vb.shape()),
        })?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m},{k}] x [{k2},{n}]"),
            });
        }
        let out = matmul_forward(va.data(), vb.data(), m, k, n);
        self.push(
            "matmul",
            Op::MatMul(a.0, b.0),
            Tensor::matrix(m, n, out).unwrap(),
        )
    }

    // --- structure ops ---

    /// Concatenate along axis 0: rank-1 vectors chain into one vector,
    /// rank-2 matrices with equal column counts stack rows.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat0",
                detail: "no inputs".into(),
            });
        }
        let first = &self.values[parts[0].0];
        let rank = first.shape().len();
        let cols = if rank == 2 { first.shape()[1] } else { 0 };
        let mut data = Vec::new();
        let mut rows = 0usize;
        for p in parts {
            let v = &self.values[p.0];
            if v.shape().len() != rank || (rank == 2 && v.shape()[1] != cols) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat0",
                    detail: format!("{:?} vs {:?}", first.shape(), v.shape()),
                });
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let shape = if rank == 2 { vec![rows, cols] } else { vec![rows] };
        self.push(
            "concat0",
            Op::Concat0(parts.iter().map(|p| p.0).collect()),
            Tensor::new(shape, data).unwrap(),
        )
    }

    /// Concatenate rank-2 tensors with equal row counts along axis 1.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let rows = match self.values[parts[0].0].dims2() {
            Some((r, _)) => r,
            None => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    detail: "inputs must be rank-2".into(),
                })
            }
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match self.values[p.0].dims2() {
                Some((r, c)) if r == rows => widths.push(c),
                other => {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat_cols",
                        detail: format!("expected {rows} rows, got {other:?}"),
                    })
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.values[p.0].data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        self.push(
            "concat_cols",
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            Tensor::matrix(rows, total, data).unwrap(),
        )
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        let (rows, cols) = v.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "slice_cols",
            detail: format!("input must be rank-2, got {:?}", v.shape()),
        })?;
        if start + len > cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{} out of {cols}", start + len),
            });
        }
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
        }
        self.push(
            "slice_cols",
            Op::SliceCols { input: a.0, start, len },
            Tensor::matrix(rows, len, data).unwrap(),
        )
    }

    /// Repeat a rank-1 vector `[n]` as every row of an `[rows, n]` matrix.
    pub fn tile_rows(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        if v.shape().len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "tile_rows",
                detail: format!("input must be rank-1, got {:?}", v.shape()),
            });
        }
        let n = v.numel();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(v.data());
        }
        self.push(
            "tile_rows",
            Op::TileRows { input: a.0, rows },
            Tensor::matrix(rows, n, data).unwrap(),
        )
    }

    /// Repeat a rank-1 vector `[B]` as every column of a `[B, cols]` matrix.
    pub fn tile_cols(&mut self, a: Var, cols: usize) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        if v.shape().len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "tile_cols",
                detail: format!("input must be rank-1, got {:?}", v.shape()),
            });
        }
        let b = v.numel();
        let mut data = Vec::with_capacity(b * cols);
        for r in 0..b {
            let x = v.data()[r];
            data.extend(std::iter::repeat(x).take(cols));
        }
        self.push(
            "tile_cols",
            Op::TileCols { input: a.0, cols },
            Tensor::matrix(b, cols, data).unwrap(),
        )
    }

    /// Sum each row of a rank-2 tensor into a rank-1 vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        let (rows, cols) = v.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "row_sum",
            detail: format!("input must be rank-2, got {:?}", v.shape()),
        })?;
        let data = (0..rows)
            .map(|r| v.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        self.push("row_sum", Op::RowSum(a.0), Tensor::vector(data))
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        let numel: usize = shape.iter().product();
        if numel != v.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", v.shape(), shape),
            });
        }
        let t = Tensor::new(shape, v.data().to_vec()).unwrap();
        self.push("reshape", Op::Reshape(a.0), t)
    }

    // --- elementwise unary ---

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        make: impl Fn(usize) -> Op,
    ) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| f(*x)).collect())
            .unwrap();
        self.push(name, make(a.0), out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("softplus", a, softplus, Op::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("log", a, f64::ln, Op::Log)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("square", a, |x| x * x, Op::Square)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sin", a, f64::sin, Op::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("cos", a, f64::cos, Op::Cos)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("neg", a, |x| -x, Op::Neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("scale", a, |x| c * x, |i| Op::Scale { input: i, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar)
    }

    /// Elementwise `x^p` for constant `p`; inputs must be positive when
    /// `p` is non-integral.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, AutodiffError> {
        self.unary("powf", a, |x| x.powf(p), |i| Op::PowConst { input: i, p })
    }

    // --- reductions ---

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push("sum", Op::Sum(a.0), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = &self.values[a.0];
        let s: f64 = v.data().iter().sum();
        let m = s / v.numel() as f64;
        self.push("mean", Op::Mean(a.0), Tensor::scalar(m))
    }

    /// `sum(values * mask) / sum(mask)`, defined as 0 with zero gradient
    /// when the mask is all zero. The mask never receives gradient.
    pub fn masked_mean(&mut self, values: Var, mask: Var) -> Result<Var, AutodiffError> {
        let (v, m) = (&self.values[values.0], &self.values[mask.0]);
        if v.shape() != m.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_mean",
                detail: format!("{:?} vs {:?}", v.shape(), m.shape()),
            });
        }
        let count: f64 = m.data().iter().sum();
        let out = if count > 0.0 {
            let s: f64 = v.data().iter().zip(m.data()).map(|(x, w)| x * w).sum();
            s / count
        } else {
            0.0
        };
        self.push(
            "masked_mean",
            Op::MaskedMean {
                values: values.0,
                mask: mask.0,
            },
            Tensor::scalar(out),
        )
    }

    // --- backward ---

    /// Exact reverse-mode gradients of a scalar output with respect to
    /// every node. Deterministic: contributions accumulate in op order.
    pub fn backward(&self, out: Var) -> Result<Gradients, AutodiffError> {
        let out_val = &self.values[out.0];
        if !out_val.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Tensor> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.shape().to_vec()))
            .collect();
        grads[out.0].data_mut()[0] = 1.0;

        for i in (0..self.ops.len()).rev() {
            let g_out = std::mem::take(&mut grads[i]);
            self.backward_step(i, &g_out, &mut grads);
            grads[i] = g_out;
        }
        Ok(Gradients { grads })
    }

    fn backward_step(&self, i: usize, g: &Tensor, grads: &mut [Tensor]) {
        // Accumulate df/dinput += g * d(node_i)/d(input); scalar-broadcast
        // inputs receive the summed contribution.
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc_broadcast(&mut grads[*a], g.data(), |_| 1.0, &self.values[*a]);
                acc_broadcast(&mut grads[*b], g.data(), |_| 1.0, &self.values[*b]);
            }
            Op::Sub(a, b) => {
                acc_broadcast(&mut grads[*a], g.data(), |_| 1.0, &self.values[*a]);
                acc_broadcast(&mut grads[*b], g.data(), |_| -1.0, &self.values[*b]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.values[*a], &self.values[*b]);
                acc_binary(&mut grads[*a], g.data(), va, vb, true);
                acc_binary(&mut grads[*b], g.data(), vb, va, true);
            }
            Op::Div(a, b) => {
                // d(a/b)/da = 1/b, d(a/b)/db = -a/b^2
                let (va, vb) = (&self.values[*a], &self.values[*b]);
                let ga = &mut grads[*a];
                if va.is_scalar() && !vb.is_scalar() {
                    let s: f64 = g.data().iter().zip(vb.data()).map(|(gi, y)| gi / y).sum();
                    ga.data_mut()[0] += s;
                } else {
                    for (k, gi) in g.data().iter().enumerate() {
                        let y = pick(vb, k);
                        ga.data_mut()[k] += gi / y;
                    }
                }
                let gb = &mut grads[*b];
                if vb.is_scalar() && !va.is_scalar() {
                    let y = vb.item();
                    let s: f64 = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(gi, x)| -gi * x / (y * y))
                        .sum();
                    gb.data_mut()[0] += s;
                } else {
                    for (k, gi) in g.data().iter().enumerate() {
                        let x = pick(va, k);
                        let y = pick(vb, k);
                        gb.data_mut()[k] += -gi * x / (y * y);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.values[*a].dims2().unwrap();
                let (_, n) = self.values[*b].dims2().unwrap();
                let (va, vb) = (self.values[*a].data(), self.values[*b].data());
                // dA += dC * B^T
                {
                    let da = grads[*a].data_mut();
                    for i in 0..m {
                        let dc_row = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let b_row = &vb[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += dc_row[j] * b_row[j];
                            }
                            da[i * k + kk] += s;
                        }
                    }
                }
                // dB += A^T * dC
                {
                    let db = grads[*b].data_mut();
                    for i in 0..m {
                        let a_row = &va[i * k..(i + 1) * k];
                        let dc_row = &g.data()[i * n..(i + 1) * n];
                        for (kk, av) in a_row.iter().enumerate() {
                            let db_row = &mut db[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                db_row[j] += av * dc_row[j];
                            }
                        }
                    }
                }
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.values[*p].numel();
                    let gp = grads[*p].data_mut();
                    for (dst, src) in gp.iter_mut().zip(&g.data()[offset..offset + len]) {
                        *dst += src;
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g
                    .dims2()
                    .expect("concat_cols output is rank-2");
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.values[*p].dims2().unwrap();
                    let gp = grads[*p].data_mut();
                    for r in 0..rows {
                        for j in 0..w {
                            gp[r * w + j] += g.data()[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start, len } => {
                let (rows, cols) = self.values[*input].dims2().unwrap();
                let gi = grads[*input].data_mut();
                for r in 0..rows {
                    for j in 0..*len {
                        gi[r * cols + start + j] += g.data()[r * len + j];
                    }
                }
            }
            Op::Tanh(a) => {
                let y = self.values[i].data();
                acc_mapped(&mut grads[*a], g.data(), |k| 1.0 - y[k] * y[k]);
            }
            Op::Sigmoid(a) => {
                let y = self.values[i].data();
                acc_mapped(&mut grads[*a], g.data(), |k| y[k] * (1.0 - y[k]));
            }
            Op::Softplus(a) => {
                let x = self.values[*a].data();
                acc_mapped(&mut grads[*a], g.data(), |k| sigmoid(x[k]));
            }
            Op::Exp(a) => {
                let y = self.values[i].data();
                acc_mapped(&mut grads[*a], g.data(), |k| y[k]);
            }
            Op::Log(a) => {
                let x = self.values[*a].data();
                acc_mapped(&mut grads[*a], g.data(), |k| 1.0 / x[k]);
            }
            Op::Sqrt(a) => {
                let y = self.values[i].data();
                acc_mapped(&mut grads[*a], g.data(), |k| 0.5 / y[k]);
            }
            Op::Square(a) => {
                let x = self.values[*a].data();
                acc_mapped(&mut grads[*a], g.data(), |k| 2.0 * x[k]);
            }
            Op::Sin(a) => {
                let x = self.values[*a].data();
                acc_mapped(&mut grads[*a], g.data(), |k| x[k].cos());
            }
            Op::Cos(a) => {
                let x = self.values[*a].data();
                acc_mapped(&mut grads[*a], g.data(), |k| -x[k].sin());
            }
            Op::Neg(a) => {
                acc_mapped(&mut grads[*a], g.data(), |_| -1.0);
            }
            Op::Scale { input, c } => {
                acc_mapped(&mut grads[*input], g.data(), |_| *c);
            }
            Op::AddScalar(a) => {
                acc_mapped(&mut grads[*a], g.data(), |_| 1.0);
            }
            Op::PowConst { input, p } => {
                let x = self.values[*input].data();
                acc_mapped(&mut grads[*input], g.data(), |k| p * x[k].powf(p - 1.0));
            }
            Op::TileRows { input, rows } => {
                let n = self.values[*input].numel();
                let gi = grads[*input].data_mut();
                for r in 0..*rows {
                    for j in 0..n {
                        gi[j] += g.data()[r * n + j];
                    }
                }
            }
            Op::TileCols { input, cols } => {
                let b = self.values[*input].numel();
                let gi = grads[*input].data_mut();
                for r in 0..b {
                    let mut s = 0.0;
                    for j in 0..*cols {
                        s += g.data()[r * cols + j];
                    }
                    gi[r] += s;
                }
            }
            Op::RowSum(a) => {
                let (rows, cols) = self.values[*a].dims2().unwrap();
                let ga = grads[*a].data_mut();
                for r in 0..rows {
                    let gr = g.data()[r];
                    for j in 0..cols {
                        ga[r * cols + j] += gr;
                    }
                }
            }
            Op::Reshape(a) => {
                let ga = grads[*a].data_mut();
                for (dst, src) in ga.iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
            Op::Sum(a) => {
                let gs = g.item();
                for dst in grads[*a].data_mut() {
                    *dst += gs;
                }
            }
            Op::Mean(a) => {
                let n = self.values[*a].numel() as f64;
                let gs = g.item() / n;
                for dst in grads[*a].data_mut() {
                    *dst += gs;
                }
            }
            Op::MaskedMean { values, mask } => {
                let m = self.values[*mask].data();
                let count: f64 = m.iter().sum();
                if count > 0.0 {
                    let gs = g.item() / count;
                    let gv = grads[*values].data_mut();
                    for (k, w) in m.iter().enumerate() {
                        gv[k] += gs * w;
                    }
                }
                // mask receives no gradient
            }
        }
    }
}

/// Per-node gradients from [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::take(&mut self.grads[v.0])
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    // Stable: max(x, 0) + ln(1 + e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matmul_forward(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
    out
}

fn pick(t: &Tensor, k: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[k]
    }
}

// Accumulate g * weight(k) into the gradient of a possibly-broadcast input.
fn acc_broadcast(target: &mut Tensor, g: &[f64], weight: impl Fn(usize) -> f64, value: &Tensor) {
    if value.is_scalar() && g.len() > 1 {
        let s: f64 = g.iter().enumerate().map(|(k, gi)| gi * weight(k)).sum();
        target.data_mut()[0] += s;
    } else {
        let t = target.data_mut();
        for (k, gi) in g.iter().enumerate() {
            t[k] += gi * weight(k);
        }
    }
}

// For mul: d/da (a*b) = b; `self_side` value drives broadcast detection.
fn acc_binary(target: &mut Tensor, g: &[f64], self_val: &Tensor, other: &Tensor, _mul: bool) {
    if self_val.is_scalar() && g.len() > 1 {
        let s: f64 = g
            .iter()
            .enumerate()
            .map(|(k, gi)| gi * pick(other, k))
            .sum();
        target.data_mut()[0] += s;
    } else {
        let t = target.data_mut();
        for (k, gi) in g.iter().enumerate() {
            t[k] += gi * pick(other, k);
        }
    }
}

fn acc_mapped(target: &mut Tensor, g: &[f64], local: impl Fn(usize) -> f64) {
    let t = target.data_mut();
    for (k, gi) in g.iter().enumerate() {
        t[k] += gi * local(k);
    }
}
