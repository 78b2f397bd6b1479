//! Operation tape. Each forward call appends a node holding its value and
//! the inputs it was computed from; `backward` walks the nodes in reverse
//! and applies each operation's hand-written adjoint.

use super::params::{ParamId, ParamSet};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    Concat(Var, Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm(Var, T),
    MeanPool(Var, Axis),
    L2Normalize(Var),
    Sum(Var),
    Focal { input: Var, targets: Vec<T>, alpha: T, gamma: T, normalizer: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Lower clamp applied to probabilities entering the focal loss.
pub const PROB_CLAMP: f64 = 1e-7;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let k = T::of(SQRT_2_OVER_PI);
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn matmul_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * *bv;
            }
        }
    }
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn matmul_bt_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                s = s + *x * *y;
            }
            out[i * n + j] = s;
        }
    }
}

/// `a^T (k x m)^T ... `: computes `a^T * b` for `a: m x k`, `b: m x n`, giving `k x n`.
fn matmul_at_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * *bv;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a tensor; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let ng = t.requires_grad();
        self.push(t.detached(), Op::Leaf, ng)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Records a parameter; trainable parameters receive gradients.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let t = params.get(id);
        self.push(t.detached(), Op::Param(id), t.requires_grad())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (n, k2) = dims(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul_bt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.len() != ta.cols() {
            return Err(Error::shape("add_row", ta.shape(), tr.shape()));
        }
        let n = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| *x + tr.data()[i % n]).collect();
        let out = Tensor::matrix(ta.rows(), n, data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.len() != ta.cols() {
            return Err(Error::shape("mul_row", ta.shape(), tr.shape()));
        }
        let n = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| *x * tr.data()[i % n]).collect();
        let out = Tensor::matrix(ta.rows(), n, data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::MulRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| *x * s).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Multiplies row `r` of `a` by `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<T>) -> Result<Var> {
        let ta = self.value(a);
        if factors.len() != ta.rows() {
            return Err(Error::shape("scale_rows", ta.shape(), &[factors.len()]));
        }
        let n = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, x)| *x * factors[i / n]).collect();
        let out = Tensor::matrix(ta.rows(), n, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::ScaleRows(a, factors), ng))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::shape("concat", ta.shape(), tb.shape()));
        }
        let (p, q) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.rows() * (p + q));
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::matrix(ta.rows(), p + q, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() || len == 0 {
            return Err(Error::shape("slice_cols", ta.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(ta.rows(), len, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= ta.rows()) {
            return Err(Error::shape("gather_rows", ta.shape(), &indices));
        }
        let mut data = Vec::with_capacity(indices.len() * ta.cols());
        for &i in &indices {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::matrix(indices.len(), ta.cols(), data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows(a, indices), ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims(ta);
        if n == 0 {
            return Err(Error::shape("softmax", ta.shape(), &[1]));
        }
        let mut data = ta.data().to_vec();
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let mx = row.iter().fold(T::neg_infinity(), |acc, x| acc.max(*x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s = s + *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Row-wise layer normalization without affine terms.
    pub fn layernorm(&mut self, a: Var, eps: T) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims(ta);
        if n == 0 {
            return Err(Error::shape("layernorm", ta.shape(), &[1]));
        }
        let nf = T::of(n as f64);
        let mut data = ta.data().to_vec();
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::LayerNorm(a, eps), ng))
    }

    pub fn mean_pool(&mut self, a: Var, axis: Axis) -> Var {
        let ta = self.value(a);
        let (m, n) = dims(ta);
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![T::zero(); n];
                for r in 0..m {
                    for (o, x) in acc.iter_mut().zip(ta.row(r)) {
                        *o = *o + *x;
                    }
                }
                let inv = T::one() / T::of(m as f64);
                Tensor::matrix(1, n, acc.into_iter().map(|v| v * inv).collect())
            }
            Axis::Cols => {
                let inv = T::one() / T::of(n as f64);
                Tensor::matrix(m, 1, (0..m).map(|r| ta.row(r).iter().copied().sum::<T>() * inv).collect())
            }
        }
        .expect("pooled shape");
        let ng = self.ng(a);
        self.push(out, Op::MeanPool(a, axis), ng)
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = dims(ta);
        let mut data = ta.data().to_vec();
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|x| *x = *x / norm);
            }
        }
        let out = Tensor::matrix(m, n, data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::L2Normalize(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Focal loss summed over all entries of `probs` and divided by `normalizer`.
    /// Probabilities are clamped into `[1e-7, 1 - 1e-7]`.
    pub fn focal_loss(&mut self, probs: Var, targets: Vec<T>, alpha: T, gamma: T, normalizer: T) -> Result<Var> {
        let tp = self.value(probs);
        if targets.len() != tp.len() {
            return Err(Error::shape("focal_loss", tp.shape(), &[targets.len()]));
        }
        if tp.data().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("focal_loss input".into()));
        }
        let total =
            tp.data().iter().zip(&targets).map(|(p, y)| focal_term(*p, *y, alpha, gamma)).sum::<T>() / normalizer;
        let ng = self.ng(probs);
        Ok(self.push(Tensor::scalar(total), Op::Focal { input: probs, targets, alpha, gamma, normalizer }, ng))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let n_out = self.value(out).len();
        if n_out != 1 {
            return Err(Error::shape("backward", self.value(out).shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![T::one()]);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs `backward` and adds parameter gradients into `params`' accumulators.
    pub fn backward_into(&self, out: Var, params: &mut ParamSet<T>) -> Result<()> {
        let grads = self.backward(out)?;
        grads.accumulate_into(self, params);
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut send = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match grads[v.0].as_mut() {
                Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
                None => grads[v.0] = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = dims(ta);
                let n = tb.cols();
                if self.ng(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_bt_into(g, tb.data(), m, n, k, &mut da);
                    send(*a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_at_into(ta.data(), g, m, k, n, &mut db);
                    send(*b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = dims(ta);
                let n = tb.rows();
                if self.ng(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g, tb.data(), m, n, k, &mut da);
                    send(*a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); n * k];
                    matmul_at_into(g, ta.data(), m, n, k, &mut db);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, g.iter().zip(tb.data()).map(|(gv, y)| *gv * *y).collect());
                }
                if self.ng(*b) {
                    send(*b, g.iter().zip(ta.data()).map(|(gv, x)| *gv * *x).collect());
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.to_vec());
                let n = out.cols();
                let mut dr = vec![T::zero(); n];
                for (i, gv) in g.iter().enumerate() {
                    dr[i % n] = dr[i % n] + *gv;
                }
                send(*row, dr);
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let n = out.cols();
                if self.ng(*a) {
                    send(*a, g.iter().enumerate().map(|(i, gv)| *gv * tr.data()[i % n]).collect());
                }
                if self.ng(*row) {
                    let mut dr = vec![T::zero(); n];
                    for (i, gv) in g.iter().enumerate() {
                        dr[i % n] = dr[i % n] + *gv * ta.data()[i];
                    }
                    send(*row, dr);
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|v| *v * *s).collect()),
            Op::ScaleRows(a, f) => {
                let n = out.cols();
                send(*a, g.iter().enumerate().map(|(i, v)| *v * f[i / n]).collect());
            }
            Op::Concat(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let m = out.rows();
                let mut da = Vec::with_capacity(m * p);
                let mut db = Vec::with_capacity(m * q);
                for r in 0..m {
                    let row = &g[r * (p + q)..(r + 1) * (p + q)];
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let (m, n) = dims(ta);
                let len = out.cols();
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                send(*a, da);
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let n = ta.cols();
                let mut da = vec![T::zero(); ta.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..n {
                        da[src * n + c] = da[src * n + c] + g[r * n + c];
                    }
                }
                send(*a, da);
            }
            Op::Sigmoid(a) => send(*a, g.iter().zip(out.data()).map(|(gv, y)| *gv * *y * (T::one() - *y)).collect()),
            Op::Gelu(a) => send(*a, g.iter().zip(self.value(*a).data()).map(|(gv, x)| *gv * gelu_grad(*x)).collect()),
            Op::Softmax(a) => {
                let (m, n) = dims(out);
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let dot = y.iter().zip(gr).map(|(a, b)| *a * *b).sum::<T>();
                    for c in 0..n {
                        da[r * n + c] = y[c] * (gr[c] - dot);
                    }
                }
                send(*a, da);
            }
            Op::LayerNorm(a, eps) => {
                let ta = self.value(*a);
                let (m, n) = dims(ta);
                let nf = T::of(n as f64);
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    let x = ta.row(r);
                    let xhat = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let mean = x.iter().copied().sum::<T>() / nf;
                    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
                    let inv = T::one() / (var + *eps).sqrt();
                    let gmean = gr.iter().copied().sum::<T>() / nf;
                    let gx = gr.iter().zip(xhat).map(|(a, b)| *a * *b).sum::<T>() / nf;
                    for c in 0..n {
                        da[r * n + c] = inv * (gr[c] - gmean - xhat[c] * gx);
                    }
                }
                send(*a, da);
            }
            Op::MeanPool(a, axis) => {
                let (m, n) = dims(self.value(*a));
                let da = match axis {
                    Axis::Rows => {
                        let inv = T::one() / T::of(m as f64);
                        (0..m * n).map(|i| g[i % n] * inv).collect()
                    }
                    Axis::Cols => {
                        let inv = T::one() / T::of(n as f64);
                        (0..m * n).map(|i| g[i / n] * inv).collect()
                    }
                };
                send(*a, da);
            }
            Op::L2Normalize(a) => {
                let ta = self.value(*a);
                let (m, n) = dims(ta);
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    let norm = ta.row(r).iter().map(|x| *x * *x).sum::<T>().sqrt();
                    if norm == T::zero() {
                        continue;
                    }
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let dot = y.iter().zip(gr).map(|(a, b)| *a * *b).sum::<T>();
                    for c in 0..n {
                        da[r * n + c] = (gr[c] - y[c] * dot) / norm;
                    }
                }
                send(*a, da);
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::Focal { input, targets, alpha, gamma, normalizer } => {
                let scale = g[0] / *normalizer;
                let da = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(p, y)| scale * focal_grad(*p, *y, *alpha, *gamma))
                    .collect();
                send(*input, da);
            }
        }
    }
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

pub(crate) fn focal_term<T: Real>(p: T, y: T, alpha: T, gamma: T) -> T {
    let (p, _) = clamp_prob(p);
    let one = T::one();
    -alpha * y * (one - p).powf(gamma) * p.ln() - (one - alpha) * (one - y) * p.powf(gamma) * (one - p).ln()
}

fn focal_grad<T: Real>(p: T, y: T, alpha: T, gamma: T) -> T {
    let (p, clamped) = clamp_prob(p);
    if clamped {
        return T::zero();
    }
    let one = T::one();
    let q = one - p;
    let pos = if gamma == T::zero() { one / p } else { q.powf(gamma) / p - gamma * q.powf(gamma - one) * p.ln() };
    let neg = if gamma == T::zero() { -one / q } else { gamma * p.powf(gamma - one) * q.ln() - p.powf(gamma) / q };
    -alpha * y * pos - (one - alpha) * (one - y) * neg
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of every parameter reached by the pass, summed over all of
    /// its uses, in parameter-id order.
    pub fn param_grads(&self, tape: &Tape<T>) -> Vec<(ParamId, Vec<T>)> {
        let mut out: std::collections::BTreeMap<ParamId, Vec<T>> = std::collections::BTreeMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(Some(g))) = (&node.op, self.grads.get(i)) {
                match out.get_mut(id) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, d)| *a = *a + *d),
                    None => {
                        out.insert(*id, g.clone());
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn accumulate_into(&self, tape: &Tape<T>, params: &mut ParamSet<T>) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(Some(g))) = (&node.op, self.grads.get(i)) {
                params.get_mut(*id).accumulate_grad(g);
            }
        }
    }
}
