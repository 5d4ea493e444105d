//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends one record holding its output value and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the records once, last to
//! first, and adds `∂loss/∂value` into the gradient slot of every parameter the
//! loss depends on. Gradients accumulate: running `backward` twice without
//! [`ParamStore::zero_grad`] doubles them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Max,
    Mean,
}

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, T),
    Act(Var, Activation),
    SoftmaxRows(Var),
    Unfold(Var, usize),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceLast(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    ReduceMax(Var, Vec<usize>),
    ReduceMean(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            op => inputs(op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Binds a parameter's current value. Binding the same parameter twice
    /// returns the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    /// Parameters bound on this tape, in binding order.
    pub fn touched_params(&self) -> Vec<ParamId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(x))?;
        Ok(self.push(out, Op::Transpose(x)))
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a bias vector `[n]` to every row of `x[.., n]`. This is the only
    /// broadcasting the kernel supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.numel() != n {
            return Err(Error::dim("add_bias", tx.shape(), tb.shape()));
        }
        let b = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| match kind {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        });
        self.push(out, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn unfold_same(&mut self, x: Var, width: usize) -> Result<Var> {
        let out = tensor::unfold_same(self.value(x), width)?;
        Ok(self.push(out, Op::Unfold(x, width)))
    }

    /// Length-preserving 1-D convolution over the rows of `x[L×k]` with
    /// zero padding of `(width-1)/2` on each side. `filters` is
    /// `[width·k × d]`, laid out window-position major.
    pub fn conv1d_same(
        &mut self,
        x: Var,
        filters: Var,
        bias: Option<Var>,
        width: usize,
    ) -> Result<Var> {
        if width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "convolution width must be odd, got {width}"
            )));
        }
        let (_, k) = self.value(x).dims2()?;
        let (rows, _) = self.value(filters).dims2()?;
        if rows != width * k {
            return Err(Error::dim(
                "conv1d_same",
                self.shape(x),
                self.shape(filters),
            ));
        }
        let windows = self.unfold_same(x, width)?;
        let out = self.matmul(windows, filters)?;
        match bias {
            Some(b) => self.add_bias(out, b),
            None => Ok(out),
        }
    }

    /// `x · w (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(out, b),
            None => Ok(out),
        }
    }

    /// Concatenates along the last axis. All other extents must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Argument("concat_last of an empty list".into()))?;
        if xs.len() == 1 {
            return Ok(*first);
        }
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        for &x in &xs[1..] {
            let s = self.shape(x);
            if &s[..s.len() - 1] != lead {
                return Err(Error::dim("concat_last", self.shape(*first), s));
            }
        }
        let rows = self.value(*first).leading();
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, Op::ConcatLast(xs.to_vec())))
    }

    /// Stacks matrices (or vectors, as single rows) along the first axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of an empty list".into()))?;
        let cols = self.value(*first).last_dim();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if t.shape().len() > 2 || t.last_dim() != cols {
                return Err(Error::dim("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.leading();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.push(out, Op::ConcatRows(xs.to_vec())))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let c = t.last_dim();
        if start >= end || end > c {
            return Err(Error::Shape(format!(
                "slice {start}..{end} out of range for last extent {c}"
            )));
        }
        let w = end - start;
        let rows = t.leading();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * c + start..r * c + end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, Op::SliceLast(x, start)))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if start >= end || end > r {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} out of range for {r} rows"
            )));
        }
        if start == 0 && end == r {
            return Ok(x);
        }
        let out = Tensor::from_parts(vec![end - start, c], t.data()[start * c..end * c].to_vec());
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Column-wise max or mean over the rows of `x[L×d]`, giving `[d]`.
    /// The max gradient goes to the first row attaining the maximum.
    pub fn reduce_seq(&mut self, x: Var, kind: Reduce) -> Result<Var> {
        let t = self.value(x);
        let (len, d) = t.dims2()?;
        if len == 0 {
            return Err(Error::EmptySequence("reduce_seq"));
        }
        let src = t.data();
        match kind {
            Reduce::Max => {
                let mut arg = vec![0usize; d];
                let mut best = src[..d].to_vec();
                for i in 1..len {
                    for j in 0..d {
                        let v = src[i * d + j];
                        if v > best[j] {
                            best[j] = v;
                            arg[j] = i;
                        }
                    }
                }
                let out = Tensor::from_parts(vec![d], best);
                Ok(self.push(out, Op::ReduceMax(x, arg)))
            }
            Reduce::Mean => {
                let mut acc = vec![T::zero(); d];
                for row in src.chunks(d) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                let inv = T::one() / T::c(len as f64);
                for a in &mut acc {
                    *a *= inv;
                }
                let out = Tensor::from_parts(vec![d], acc);
                Ok(self.push(out, Op::ReduceMean(x)))
            }
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Rows `ids` of `table[V×k]`, giving `[ids.len() × k]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, k) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather_rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * k);
        for &id in ids {
            if id >= v {
                return Err(Error::Argument(format!(
                    "row id {id} out of range for {v} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), k], data);
        Ok(self.push(out, Op::Gather(table, ids.to_vec())))
    }

    /// Mean negative log-likelihood of `labels` under the row distributions
    /// in `probs[B×K]`. Probabilities are clamped at [`LOG_CLAMP`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let (b, k) = t.dims2()?;
        if labels.len() != b {
            return Err(Error::Argument(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        let clamp = T::c(LOG_CLAMP);
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Argument(format!(
                    "label {y} out of range for {k} classes"
                )));
            }
            total += -t.at(i, y).max(clamp).ln();
        }
        let out = Tensor::scalar(total / T::c(b as f64));
        Ok(self.push(out, Op::CrossEntropy(probs, labels.to_vec())))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1/(1-rate)`. A rate of zero records nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::c(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let mask = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = self.constant(Tensor::from_parts(shape, mask));
        self.mul(x, mask).expect("mask shape matches input")
    }

    /// Adds `∂loss/∂p` into every parameter `p` reachable from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn backprop(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(da) = self.slot(grads, *a) {
                    tensor::matmul_nt_acc(g, tb.data(), da, m, n, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    tensor::matmul_tn_acc(ta.data(), g, db, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, T::one());
                self.acc_scaled(grads, *b, g, T::one());
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, T::one());
                self.acc_scaled(grads, *b, g, -T::one());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(tb.data()) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(ta.data()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddBias(x, b) => {
                self.acc_scaled(grads, *x, g, T::one());
                let n = self.value(*b).numel();
                if let Some(db) = self.slot(grads, *b) {
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                }
            }
            Op::Affine(x, scale) => self.acc_scaled(grads, *x, g, *scale),
            Op::Act(x, kind) => {
                let input = self.value(*x).clone();
                let out = &node.value;
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..dx.len() {
                        let local = match kind {
                            Activation::Relu => {
                                if input.data()[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Tanh => T::one() - out.data()[i] * out.data()[i],
                            Activation::Sigmoid => out.data()[i] * (T::one() - out.data()[i]),
                        };
                        dx[i] += g[i] * local;
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c))
                    {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Unfold(x, width) => {
                let (len, k) = self.value(*x).dims2()?;
                let half = width / 2;
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..len {
                        for w in 0..*width {
                            let pos = i + w;
                            if pos < half || pos - half >= len {
                                continue;
                            }
                            let s = pos - half;
                            let src = (i * width + w) * k;
                            for j in 0..k {
                                dx[s * k + j] += g[src + j];
                            }
                        }
                    }
                }
            }
            Op::ConcatLast(xs) => {
                let total = node.value.last_dim();
                let rows = node.value.leading();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    if let Some(dx) = self.slot(grads, x) {
                        for r in 0..rows {
                            for j in 0..w {
                                dx[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    if let Some(dx) = self.slot(grads, x) {
                        for (d, &gi) in dx.iter_mut().zip(&g[offset..offset + n]) {
                            *d += gi;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceLast(x, start) => {
                let c = self.value(*x).last_dim();
                let w = node.value.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (j, &gi) in gr.iter().enumerate() {
                            dx[r * c + start + j] += gi;
                        }
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = node.value.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, &gi) in dx[start * c..].iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Reshape(x) => self.acc_scaled(grads, *x, g, T::one()),
            Op::ReduceMax(x, arg) => {
                let d = arg.len();
                if let Some(dx) = self.slot(grads, *x) {
                    for (j, &i) in arg.iter().enumerate() {
                        dx[i * d + j] += g[j];
                    }
                }
            }
            Op::ReduceMean(x) => {
                let (len, d) = self.value(*x).dims2()?;
                let inv = T::one() / T::c(len as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    for (i, v) in dx.iter_mut().enumerate() {
                        *v += g[i % d] * inv;
                    }
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(dx) = self.slot(grads, *x) {
                    for v in dx.iter_mut() {
                        *v += g0;
                    }
                }
            }
            Op::Gather(table, ids) => {
                let k = self.value(*table).last_dim();
                if let Some(dt) = self.slot(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..k {
                            dt[id * k + j] += g[i * k + j];
                        }
                    }
                }
            }
            Op::CrossEntropy(probs, labels) => {
                let p = self.value(*probs).clone();
                let k = p.last_dim();
                let b = T::c(labels.len() as f64);
                let clamp = T::c(LOG_CLAMP);
                if let Some(dp) = self.slot(grads, *probs) {
                    for (i, &y) in labels.iter().enumerate() {
                        let pi = p.at(i, y);
                        if pi > clamp {
                            dp[i * k + y] += -g[0] / (b * pi);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<T>>], x: Var, g: &[T], scale: T) {
        if let Some(dx) = self.slot(grads, x) {
            for (d, &gi) in dx.iter_mut().zip(g) {
                *d += scale * gi;
            }
        }
    }
}

fn inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
            vec![*a, *b]
        }
        Op::Transpose(x)
        | Op::Affine(x, _)
        | Op::Act(x, _)
        | Op::SoftmaxRows(x)
        | Op::Unfold(x, _)
        | Op::SliceLast(x, _)
        | Op::SliceRows(x, _)
        | Op::Reshape(x)
        | Op::ReduceMax(x, _)
        | Op::ReduceMean(x)
        | Op::Sum(x)
        | Op::Gather(x, _)
        | Op::CrossEntropy(x, _) => vec![*x],
        Op::ConcatLast(xs) | Op::ConcatRows(xs) => xs.clone(),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
