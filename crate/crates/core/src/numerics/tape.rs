//! Reverse-mode differentiation over a flat operation tape.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep from the
//! loss visits every node after all of its consumers.

use crate::error::{Error, Result};
use crate::numerics::tensor::{gelu_grad, gelu_scalar, gemm, row_moments, softmax_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Gelu(Var),
    Relu(Var),
    Square(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    RowNormalize { x: Var, norms: Vec<f64> },
    Attention(Box<AttentionCache>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Sum(Var),
}

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    seq: usize,
    heads: usize,
    /// `[batch][head][i][j]` attention weights.
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that influenced it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros if `v` did not influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
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

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Broadcast-add a row vector (length = cols) to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.len() != c {
            return Err(Error::shape("add_row", xv.shape(), bv.shape()));
        }
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::raw(xv.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// Broadcast-multiply every row of `x` by a row vector.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gain));
        let c = xv.cols();
        if gv.len() != c {
            return Err(Error::shape("mul_row", xv.shape(), gv.shape()));
        }
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(gv.data()).map(|(a, b)| a * b))
            .collect();
        let out = Tensor::raw(xv.shape().to_vec(), data);
        Ok(self.push(out, Op::MulRow(x, gain)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|a| a * k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|a| a + k);
        self.push(v, Op::AddScalar(x))
    }

    /// Elementwise product with a constant (non-differentiated) tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let v = self.value(x).zip_map(&c, "mul_const", |a, b| a * b)?;
        Ok(self.push(v, Op::MulConst(x, c)))
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = crate::numerics::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(Error::shape("matmul_t", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), true, 0.0, &mut out);
        let v = Tensor::raw(vec![m, n], out);
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu_scalar);
        self.push(v, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x))
    }

    /// Row-wise normalization without affine; `eps` inside the square root.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Vec::with_capacity(xv.len());
        let mut inv = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(c) {
            let (mean, inv_std) = row_moments(row, eps);
            inv.push(inv_std);
            out.extend(row.iter().map(|v| (v - mean) * inv_std));
        }
        let v = Tensor::raw(xv.shape().to_vec(), out);
        self.push(v, Op::LayerNorm { x, inv_std: inv })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = crate::numerics::tensor::softmax(self.value(x));
        self.push(v, Op::Softmax(x))
    }

    /// Scale each row to unit L2 norm. Errors on a zero row.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut norms = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for (i, row) in xv.data().chunks(c).enumerate() {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::invalid(format!("row {i} has zero norm")));
            }
            norms.push(n);
            out.extend(row.iter().map(|a| a / n));
        }
        let v = Tensor::raw(xv.shape().to_vec(), out);
        Ok(self.push(v, Op::RowNormalize { x, norms }))
    }

    /// Multi-head scaled dot-product self-attention over `batch` independent
    /// sequences of length `seq`. Rows are token-major: row `s * batch + b`
    /// holds token `s` of sequence `b`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", qv, kv)?;
        same_shape("attention", qv, vv)?;
        let d = qv.cols();
        if qv.rows() != batch * seq || heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", qv.shape(), &[batch, seq, heads]));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; qv.len()];
        let mut probs = Vec::with_capacity(batch * heads * seq * seq);
        let mut scores = Vec::with_capacity(seq);
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &qv.row(i * batch + b)[off..off + dh];
                    scores.clear();
                    for j in 0..seq {
                        let kj = &kv.row(j * batch + b)[off..off + dh];
                        scores.push(dot(qi, kj) * scale);
                    }
                    let start = probs.len();
                    softmax_into(&scores, &mut probs);
                    let o = &mut out[(i * batch + b) * d + off..(i * batch + b) * d + off + dh];
                    for j in 0..seq {
                        let p = probs[start + j];
                        let vj = &vv.row(j * batch + b)[off..off + dh];
                        for (oo, vvj) in o.iter_mut().zip(vj) {
                            *oo += p * vvj;
                        }
                    }
                }
            }
        }
        let value = Tensor::raw(qv.shape().to_vec(), out);
        let cache = AttentionCache { q, k, v, batch, seq, heads, probs };
        Ok(self.push(value, Op::Attention(Box::new(cache))))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = crate::numerics::tensor::concat(&tensors, 0)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = crate::numerics::tensor::concat(&tensors, 1)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `[start, start + len)` as a `[len, cols]` matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() || len == 0 {
            return Err(Error::shape("slice_rows", xv.shape(), &[start, len]));
        }
        let c = xv.cols();
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let v = Tensor::raw(vec![len, c], data);
        Ok(self.push(v, Op::SliceRows { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Gradient(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::raw(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                axpy(self.slot(grads, *a), 1.0, g);
                axpy(self.slot(grads, *b), 1.0, g);
            }
            Op::Sub(a, b) => {
                axpy(self.slot(grads, *a), 1.0, g);
                axpy(self.slot(grads, *b), -1.0, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = self.slot(grads, *a);
                for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                    *o += gi * bi;
                }
                let gb = self.slot(grads, *b);
                for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                    *o += gi * ai;
                }
            }
            Op::AddRow(x, bias) => {
                axpy(self.slot(grads, *x), 1.0, g);
                let c = self.value(*bias).len();
                let gb = self.slot(grads, *bias);
                for row in g.chunks(c) {
                    axpy(gb, 1.0, row);
                }
            }
            Op::MulRow(x, gain) => {
                let c = self.value(*gain).len();
                let (xv, sv) = (self.value(*x).data(), self.value(*gain).data());
                let gx = self.slot(grads, *x);
                for (gr, or) in g.chunks(c).zip(gx.chunks_mut(c)) {
                    for ((o, gi), si) in or.iter_mut().zip(gr).zip(sv) {
                        *o += gi * si;
                    }
                }
                let gs = self.slot(grads, *gain);
                for (gr, xr) in g.chunks(c).zip(xv.chunks(c)) {
                    for ((o, gi), xi) in gs.iter_mut().zip(gr).zip(xr) {
                        *o += gi * xi;
                    }
                }
            }
            Op::Scale(x, k) => axpy(self.slot(grads, *x), *k, g),
            Op::AddScalar(x) => axpy(self.slot(grads, *x), 1.0, g),
            Op::MulConst(x, c) => {
                let gx = self.slot(grads, *x);
                for ((o, gi), ci) in gx.iter_mut().zip(g).zip(c.data()) {
                    *o += gi * ci;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                gemm(m, n, k, g, false, bv.data(), true, 1.0, self.slot(grads, *a));
                gemm(k, m, n, av.data(), true, g, false, 1.0, self.slot(grads, *b));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                gemm(m, n, k, g, false, bv.data(), false, 1.0, self.slot(grads, *a));
                gemm(n, m, k, g, true, av.data(), false, 1.0, self.slot(grads, *b));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(grads, *x);
                for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi * gelu_grad(*xi);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(grads, *x);
                for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                    if *xi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(grads, *x);
                for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += 2.0 * xi * gi;
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let c = node.value.cols();
                let gx = self.slot(grads, *x);
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * c..(r + 1) * c];
                    let yr = &y[r * c..(r + 1) * c];
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = dot(gr, yr) / c as f64;
                    for j in 0..c {
                        gx[r * c + j] += inv * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                let gx = self.slot(grads, *x);
                for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let s = dot(gr, yr);
                    for ((o, gi), yi) in or.iter_mut().zip(gr).zip(yr) {
                        *o += yi * (gi - s);
                    }
                }
            }
            Op::RowNormalize { x, norms } => {
                let y = node.value.data();
                let c = node.value.cols();
                let gx = self.slot(grads, *x);
                for (r, n) in norms.iter().enumerate() {
                    let gr = &g[r * c..(r + 1) * c];
                    let yr = &y[r * c..(r + 1) * c];
                    let s = dot(gr, yr);
                    for j in 0..c {
                        gx[r * c + j] += (gr[j] - yr[j] * s) / n;
                    }
                }
            }
            Op::Attention(cache) => self.backprop_attention(cache, g, grads),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    axpy(self.slot(grads, *p), 1.0, &g[off..off + n]);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    let gp = self.slot(grads, *p);
                    for (r, or) in gp.chunks_mut(c).enumerate() {
                        axpy(or, 1.0, &g[r * total + col..r * total + col + c]);
                    }
                    col += c;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.cols();
                let gx = self.slot(grads, *x);
                axpy(&mut gx[start * c..start * c + g.len()], 1.0, g);
            }
            Op::Sum(x) => {
                let gx = self.slot(grads, *x);
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
        }
    }

    fn backprop_attention(&self, c: &AttentionCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let d = qv.cols();
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (batch, seq) = (c.batch, c.seq);
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; qv.len()];
        let mut dv = vec![0.0; qv.len()];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..c.heads {
                let off = h * dh;
                for i in 0..seq {
                    let base = ((b * c.heads + h) * seq + i) * seq;
                    let p = &c.probs[base..base + seq];
                    let ri = i * batch + b;
                    let go = &g[ri * d + off..ri * d + off + dh];
                    for j in 0..seq {
                        let rj = j * batch + b;
                        dp[j] = dot(go, &vv.row(rj)[off..off + dh]);
                        axpy(&mut dv[rj * d + off..rj * d + off + dh], p[j], go);
                    }
                    let s = dot(p, &dp);
                    let qi = &qv.row(ri)[off..off + dh];
                    for j in 0..seq {
                        let ds = p[j] * (dp[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let rj = j * batch + b;
                        axpy(&mut dq[ri * d + off..ri * d + off + dh], ds, &kv.row(rj)[off..off + dh]);
                        axpy(&mut dk[rj * d + off..rj * d + off + dh], ds, qi);
                    }
                }
            }
        }
        axpy(self.slot(grads, c.q), 1.0, &dq);
        axpy(self.slot(grads, c.k), 1.0, &dk);
        axpy(self.slot(grads, c.v), 1.0, &dv);
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
