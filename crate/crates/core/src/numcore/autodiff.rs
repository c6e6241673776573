//! Reverse-mode differentiation over a flat tape of matrix operations.
//!
//! Every call on [`Tape`] evaluates eagerly and appends a node. Nodes are
//! stored in creation order, so the tape is already topologically sorted and
//! the backward pass is a single reverse sweep.

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Adds a length-`c` vector to every row.
    AddRow(Var, Var),
    /// Multiplies every row elementwise by a length-`c` vector.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    /// Row-wise standardization (no affine part); caches 1/σ per row.
    Normalize(Var, Vec<f64>),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    /// Row L2 norms as an `n×1` column.
    RowNorm(Var),
    /// Divides each row by the matching entry of an `n×1` column.
    DivRows(Var, Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    /// Picks one column per row, giving `n×1`.
    Gather(Var, Vec<usize>),
    /// Recorded value without a derivative rule.
    Opaque(String),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    // log Σ exp(v − m) = log1p(Σ over non-argmax entries), exact near one-hot
    let am = super::tensor::argmax(row);
    let m = row[am];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != am)
        .map(|(_, v)| (v - m).exp())
        .sum();
    let log_z = rest.ln_1p();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m) - log_z;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Records an input; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.clear_grad();
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    fn mat(&self, rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_matrix(rows, cols, data).expect("op preserves element count")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        ensure!(k == k2, "matmul shape mismatch {n}x{k} · {k2}x{m}");
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        let value = self.mat(n, m, data);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` with `a: n×k`, `b: m×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (m, k2)) = (self.shape(a), self.shape(b));
        ensure!(k == k2, "matmul_t shape mismatch {n}x{k} · ({m}x{k2})ᵀ");
        let data = matmul_bt_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        let value = self.mat(n, m, data);
        Ok(self.push(value, Op::MatMulT(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(
            ta.shape() == tb.shape(),
            "elementwise shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_op(&mut self, a: Var, r: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (n, c) = self.shape(a);
        let rv = self.value(r);
        ensure!(
            rv.len() == c,
            "row broadcast needs {c} entries, got {}",
            rv.len()
        );
        let av = self.value(a).data();
        let rd = rv.data();
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            data.extend(av[i * c..(i + 1) * c].iter().zip(rd).map(|(x, y)| f(*x, *y)));
        }
        let rg = self.rg(a) || self.rg(r);
        let value = self.mat(n, c, data);
        Ok(self.push(value, op, rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("map keeps shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    /// Row-wise `(x − mean) / sqrt(var + eps)` with the biased variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let (n, c) = self.shape(a);
        let x = self.value(a).data();
        let mut data = vec![0.0; n * c];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in data[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        let value = self.mat(n, c, data);
        self.push(value, Op::Normalize(a, inv_std), rg)
    }

    fn rowwise(&mut self, a: Var, f: fn(&[f64], &mut [f64]), op: Op) -> Var {
        let (n, c) = self.shape(a);
        let x = self.value(a).data();
        let mut data = vec![0.0; n * c];
        for i in 0..n {
            f(&x[i * c..(i + 1) * c], &mut data[i * c..(i + 1) * c]);
        }
        let rg = self.rg(a);
        let value = self.mat(n, c, data);
        self.push(value, op, rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, softmax_row, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, log_softmax_row, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn row_norm(&mut self, a: Var) -> Var {
        let (n, _) = self.shape(a);
        let t = self.value(a);
        let data = (0..n)
            .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(a);
        let value = self.mat(n, 1, data);
        self.push(value, Op::RowNorm(a), rg)
    }

    pub fn div_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        let d = self.value(col);
        ensure!(d.len() == n, "div_rows needs {n} divisors, got {}", d.len());
        let x = self.value(a).data();
        let dd = d.data();
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            data.extend(x[i * c..(i + 1) * c].iter().map(|v| v / dd[i]));
        }
        let rg = self.rg(a) || self.rg(col);
        let value = self.mat(n, c, data);
        Ok(self.push(value, Op::DivRows(a, col), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.shape(a);
        ensure!(start < end && end <= c, "column slice {start}..{end} of {c}");
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        let rg = self.rg(a);
        let value = self.mat(n, end - start, data);
        Ok(self.push(value, Op::SliceCols(a, start, end), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat of nothing");
        let n = self.shape(parts[0]).0;
        ensure!(
            parts.iter().all(|&p| self.shape(p).0 == n),
            "concat_cols row mismatch"
        );
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = self.mat(n, total, data);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(a);
        ensure!(idx.len() == n, "gather needs one index per row");
        ensure!(idx.iter().all(|&j| j < c), "gather index out of range {c}");
        let t = self.value(a);
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let rg = self.rg(a);
        let value = self.mat(n, 1, data);
        Ok(self.push(value, Op::Gather(a, idx.to_vec()), rg))
    }

    /// Records a value computed outside the supported op set. It may be read
    /// freely, but a backward pass that needs to differentiate through it
    /// fails with [`Error::UnsupportedOp`].
    pub fn opaque(&mut self, name: &str, value: Tensor, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|&p| self.rg(p));
        self.push(value, Op::Opaque(name.to_string()), rg)
    }

    /// Differentiates a scalar node with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((n, k), (_, m)) = (self.shape(*a), self.shape(*b));
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    acc(*a, matmul_bt_raw(g, self.value(*b).data(), n, m, k));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    acc(*b, matmul_at_raw(self.value(*a).data(), g, n, k, m));
                }
            }
            Op::MatMulT(a, b) => {
                let ((n, k), (m, _)) = (self.shape(*a), self.shape(*b));
                if self.rg(*a) {
                    // dA = G · B
                    acc(*a, matmul_raw(g, self.value(*b).data(), n, m, k));
                }
                if self.rg(*b) {
                    // dB = Gᵀ · A
                    acc(*b, matmul_at_raw(g, self.value(*a).data(), n, m, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, r) => {
                let (_, c) = self.shape(*a);
                acc(*a, g.to_vec());
                let mut dr = vec![0.0; c];
                for row in g.chunks(c) {
                    dr.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                acc(*r, dr);
            }
            Op::MulRow(a, r) => {
                let (_, c) = self.shape(*a);
                let rv = self.value(*r).data();
                let av = self.value(*a).data();
                let da = g
                    .chunks(c)
                    .flat_map(|row| row.iter().zip(rv).map(|(x, y)| x * y))
                    .collect();
                acc(*a, da);
                let mut dr = vec![0.0; c];
                for (grow, arow) in g.chunks(c).zip(av.chunks(c)) {
                    for j in 0..c {
                        dr[j] += grow[j] * arow[j];
                    }
                }
                acc(*r, dr);
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect());
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(d, &x)| d * gelu_grad(x)).collect());
            }
            Op::Normalize(a, inv_std) => {
                let (n, c) = self.shape(*a);
                let y = out.data();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    let gy = &g[i * c..(i + 1) * c];
                    let yy = &y[i * c..(i + 1) * c];
                    let mg = gy.iter().sum::<f64>() / c as f64;
                    let mgy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv_std[i] * (gy[j] - mg - yy[j] * mgy);
                    }
                }
                acc(*a, dx);
            }
            Op::Softmax(a) => {
                let (_, c) = self.shape(*a);
                let s = out.data();
                let mut dx = Vec::with_capacity(s.len());
                for (grow, srow) in g.chunks(c).zip(s.chunks(c)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(x, y)| x * y).sum();
                    dx.extend(grow.iter().zip(srow).map(|(gv, sv)| sv * (gv - dot)));
                }
                acc(*a, dx);
            }
            Op::LogSoftmax(a) => {
                let (_, c) = self.shape(*a);
                let ls = out.data();
                let mut dx = Vec::with_capacity(ls.len());
                for (grow, lrow) in g.chunks(c).zip(ls.chunks(c)) {
                    let total: f64 = grow.iter().sum();
                    dx.extend(grow.iter().zip(lrow).map(|(gv, lv)| gv - lv.exp() * total));
                }
                acc(*a, dx);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(d, x)| d / x).collect());
            }
            Op::Exp(a) => {
                acc(*a, g.iter().zip(out.data()).map(|(d, y)| d * y).collect());
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::RowNorm(a) => {
                let (_, c) = self.shape(*a);
                let x = self.value(*a).data();
                let norms = out.data();
                let mut dx = Vec::with_capacity(x.len());
                for (i, row) in x.chunks(c).enumerate() {
                    let nrm = norms[i];
                    if nrm > 0.0 {
                        dx.extend(row.iter().map(|v| g[i] * v / nrm));
                    } else {
                        dx.extend(std::iter::repeat(0.0).take(c));
                    }
                }
                acc(*a, dx);
            }
            Op::DivRows(a, d) => {
                let (_, c) = self.shape(*a);
                let dv = self.value(*d).data();
                let y = out.data();
                let mut da = Vec::with_capacity(g.len());
                let mut dd = vec![0.0; dv.len()];
                for i in 0..dv.len() {
                    let gr = &g[i * c..(i + 1) * c];
                    da.extend(gr.iter().map(|v| v / dv[i]));
                    let yr = &y[i * c..(i + 1) * c];
                    dd[i] = -gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / dv[i];
                }
                acc(*a, da);
                acc(*d, dd);
            }
            Op::SliceCols(a, start, end) => {
                let (n, c) = self.shape(*a);
                let w = end - start;
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    dx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(*a, dx);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let (n, w) = self.shape(p);
                    let mut dp = Vec::with_capacity(n * w);
                    for i in 0..n {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    acc(p, dp);
                }
            }
            Op::Gather(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut dx = vec![0.0; n * c];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * c + j] = g[i];
                }
                acc(*a, dx);
            }
            Op::Opaque(name) => {
                if g.iter().any(|v| *v != 0.0) {
                    return Err(Error::UnsupportedOp(name.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Result of a backward pass: ∂loss/∂node for every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a node, or `None` if it did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into the tensor's accumulator. A tensor that
    /// requires grad but did not participate ends up with a zero-filled buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) {
        if !t.requires_grad() {
            return;
        }
        let buf = t.grad_mut();
        if let Some(g) = self.get(v) {
            buf.iter_mut().zip(g).for_each(|(b, d)| *b += d);
        }
    }
}
