use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softplus,
    /// Softmax over the last dimension.
    Softmax,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Reshape(Var),
    SelectAxis1(Var, usize),
    StackAxis1(Vec<Var>),
    ConcatLast(Vec<Var>),
    ConstLeftMul(Var, Arc<Vec<f64>>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout(Var, Vec<f64>),
    PairMaxPool(Var, Vec<Option<usize>>),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Batch statistics produced by a train-mode batch norm, for updating the
/// running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Ordered record of primitive applications. Nodes are appended as they are
/// computed, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn out(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op output shape consistent")
    }

    /// Untracked input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Registers a parameter as a leaf. Registering the same id twice returns
    /// the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).clone();
        value.zero_grad();
        let needs = store.is_trainable(id);
        let v = self.push(value, Op::Leaf, needs);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(vec![bs, m, n], out), Op::BatchMatMul(a, b), ng))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(shape, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector `b` of length `n` to every slice along the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(Error::shape("add_bias", self.shape(a), self.shape(b)));
        }
        let bias = self.data(b);
        let data = self
            .data(a)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(shape, data), Op::AddBias(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(Self::out(shape, data), Op::Scale(a, c), ng)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let x = self.data(a);
        let data = match kind {
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
            Activation::Softplus => x.iter().map(|&v| softplus(v)).collect(),
            Activation::Softmax => {
                let n = (*self.shape(a).last().unwrap_or(&1)).max(1);
                let mut out = x.to_vec();
                out.chunks_mut(n).for_each(softmax_in_place);
                out
            }
        };
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(Self::out(shape, data), Op::Act(a, kind), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Softplus)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Softmax)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(Self::out(shape.to_vec(), data), Op::Reshape(a), ng))
    }

    /// `[B, T, F]` → `[B, F]` at index `t` of axis 1.
    pub fn select_axis1(&mut self, a: Var, t: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || t >= s[1] {
            return Err(Error::shape("select_axis1", s, &[t]));
        }
        let (bs, tl, f) = (s[0], s[1], s[2]);
        let x = self.data(a);
        let mut data = Vec::with_capacity(bs * f);
        for b in 0..bs {
            let off = (b * tl + t) * f;
            data.extend_from_slice(&x[off..off + f]);
        }
        let ng = self.ng(a);
        Ok(self.push(Self::out(vec![bs, f], data), Op::SelectAxis1(a, t), ng))
    }

    /// Stacks `T` tensors of shape `[B, F]` into `[B, T, F]`.
    pub fn stack_axis1(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Param("stack of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::shape("stack_axis1", &s0, &[]));
        }
        for p in parts {
            if self.shape(*p) != s0.as_slice() {
                return Err(Error::shape("stack_axis1", &s0, self.shape(*p)));
            }
        }
        let (bs, f, tl) = (s0[0], s0[1], parts.len());
        let mut data = vec![0.0; bs * tl * f];
        for (t, p) in parts.iter().enumerate() {
            let x = self.data(*p);
            for b in 0..bs {
                data[(b * tl + t) * f..(b * tl + t + 1) * f].copy_from_slice(&x[b * f..(b + 1) * f]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Self::out(vec![bs, tl, f], data), Op::StackAxis1(parts.to_vec()), ng))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Param("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        let lead = &s0[..s0.len().saturating_sub(1)];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat_last", &s0, s));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Self::out(shape, data), Op::ConcatLast(parts.to_vec()), ng))
    }

    /// Applies a constant `N×N` matrix to every batch slice of `[B, N, F]`.
    pub fn const_left_mul(&mut self, m: Arc<Vec<f64>>, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || m.len() != s[1] * s[1] {
            return Err(Error::shape("const_left_mul", s, &[m.len()]));
        }
        let (bs, n, f) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; bs * n * f];
        let xd = self.data(x);
        for b in 0..bs {
            let r = b * n * f..(b + 1) * n * f;
            gemm(n, n, f, &m, false, &xd[r.clone()], false, &mut out[r], 0.0);
        }
        let ng = self.ng(x);
        Ok(self.push(Self::out(vec![bs, n, f], out), Op::ConstLeftMul(x, m), ng))
    }

    /// Batch normalization over axis 0 of a `[batch, features]` input.
    ///
    /// Train mode normalizes with the biased batch variance and returns the
    /// batch statistics; eval mode uses `running` = (mean, var).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("batch_norm", &s, &[]));
        }
        let (n, f) = (s[0], s[1]);
        if self.shape(gamma) != [f] || self.shape(beta) != [f] || running.0.len() != f || running.1.len() != f {
            return Err(Error::shape("batch_norm", &s, self.shape(gamma)));
        }
        let xd = self.data(x);
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Param(format!(
                        "batch norm in train mode needs batch >= 2, got {n}"
                    )));
                }
                let mut mean = vec![0.0; f];
                for row in xd.chunks(f) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for row in xd.chunks(f) {
                    for j in 0..f {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.0.to_vec(), running.1.to_vec(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                let h = (xd[i * f + j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                out[i * f + j] = g[j] * h + bt[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(
            Self::out(s, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            ng,
        );
        Ok((v, stats))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`; identity in
    /// eval mode or at rate 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Self::out(shape, data), Op::Dropout(x, mask), ng))
    }

    /// Max over adjacent node pairs of a `[B, N, F]` signal. Nodes flagged in
    /// `fake` never win; a pair of two fake nodes yields 0.
    pub fn pair_max_pool(&mut self, x: Var, fake: &[bool]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] % 2 != 0 || fake.len() != s[1] {
            return Err(Error::shape("pair_max_pool", s, &[fake.len()]));
        }
        let (bs, n, f) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; bs * (n / 2) * f];
        let mut winners = vec![None; out.len()];
        for b in 0..bs {
            for j in 0..n / 2 {
                for c in 0..f {
                    let mut best = f64::MIN;
                    let mut arg = None;
                    for node in [2 * j, 2 * j + 1] {
                        let idx = (b * n + node) * f + c;
                        let v = if fake[node] { f64::MIN } else { xd[idx] };
                        if arg.is_none() && !fake[node] || v > best {
                            best = v;
                            arg = (!fake[node]).then_some(idx);
                        }
                    }
                    let o = (b * (n / 2) + j) * f + c;
                    if let Some(i) = arg {
                        out[o] = xd[i];
                        winners[o] = Some(i);
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Self::out(vec![bs, n / 2, f], out), Op::PairMaxPool(x, winners), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.data(a).iter().sum::<f64>() / n;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|v| v * v).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), ng)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", s, &[labels.len()]));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Param(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = 0.0;
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[l];
            softmax_in_place(row);
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total / n.max(1) as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are added into
    /// `store`, so repeated calls accumulate.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(id), Some(g)) = (self.nodes[i].param, g) {
                store.get_mut(id).accumulate_grad(&g);
            }
        }
        Ok(())
    }

    /// Gradient of a scalar `loss` with respect to `wrt`, or zeros when `wrt`
    /// does not influence the loss.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let mut grads = self.gradients(loss)?;
        Ok(grads[wrt.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.value(wrt).len()]))
    }

    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Param(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.data(*b), true, &mut da, 0.0);
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.data(*a), true, g, false, &mut db, 0.0);
                    self.acc(grads, *b, db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.ng(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bd[i * k * n..(i + 1) * k * n],
                            true,
                            &mut da[i * m * k..(i + 1) * m * k],
                            0.0,
                        );
                    }
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[i * m * k..(i + 1) * m * k],
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &mut db[i * k * n..(i + 1) * k * n],
                            0.0,
                        );
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let d = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                    self.acc(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                    self.acc(grads, *b, d);
                }
            }
            Op::AddBias(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::Act(a, kind) => {
                let d = match kind {
                    Activation::Sigmoid => g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
                    Activation::Tanh => g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect(),
                    Activation::Softplus => g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(g, &x)| g * sigmoid(x))
                        .collect(),
                    Activation::Softmax => {
                        let n = (*node.value.shape().last().unwrap_or(&1)).max(1);
                        let mut d = vec![0.0; g.len()];
                        for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                dr[j] = yr[j] * (gr[j] - dot);
                            }
                        }
                        d
                    }
                };
                self.acc(grads, *a, d);
            }
            Op::Reshape(a) => self.acc(grads, *a, g.to_vec()),
            Op::SelectAxis1(a, t) => {
                let s = self.shape(*a);
                let (bs, tl, f) = (s[0], s[1], s[2]);
                let mut d = vec![0.0; bs * tl * f];
                for b in 0..bs {
                    let off = (b * tl + t) * f;
                    d[off..off + f].copy_from_slice(&g[b * f..(b + 1) * f]);
                }
                self.acc(grads, *a, d);
            }
            Op::StackAxis1(parts) => {
                let s = node.value.shape();
                let (bs, tl, f) = (s[0], s[1], s[2]);
                for (t, p) in parts.iter().enumerate() {
                    if !self.ng(*p) {
                        continue;
                    }
                    let mut d = Vec::with_capacity(bs * f);
                    for b in 0..bs {
                        d.extend_from_slice(&g[(b * tl + t) * f..(b * tl + t + 1) * f]);
                    }
                    self.acc(grads, *p, d);
                }
            }
            Op::ConcatLast(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = g.len() / total.max(1);
                let mut off = 0;
                for p in parts {
                    let w = *self.shape(*p).last().unwrap();
                    if self.ng(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        self.acc(grads, *p, d);
                    }
                    off += w;
                }
            }
            Op::ConstLeftMul(x, m) => {
                let s = self.shape(*x);
                let (bs, n, f) = (s[0], s[1], s[2]);
                let mut d = vec![0.0; bs * n * f];
                for b in 0..bs {
                    let r = b * n * f..(b + 1) * n * f;
                    gemm(n, n, f, m, true, &g[r.clone()], false, &mut d[r], 0.0);
                }
                self.acc(grads, *x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let f = inv_std.len();
                let n = g.len() / f.max(1);
                let gd = self.data(*gamma);
                if self.ng(*gamma) {
                    let mut dg = vec![0.0; f];
                    for (gr, hr) in g.chunks(f).zip(xhat.chunks(f)) {
                        for j in 0..f {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.acc(grads, *gamma, dg);
                }
                if self.ng(*beta) {
                    let mut db = vec![0.0; f];
                    for gr in g.chunks(f) {
                        db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                    self.acc(grads, *beta, db);
                }
                if self.ng(*x) {
                    let mut dx = vec![0.0; n * f];
                    if *train {
                        let mut sum_dh = vec![0.0; f];
                        let mut sum_dh_h = vec![0.0; f];
                        for (gr, hr) in g.chunks(f).zip(xhat.chunks(f)) {
                            for j in 0..f {
                                let dh = gr[j] * gd[j];
                                sum_dh[j] += dh;
                                sum_dh_h[j] += dh * hr[j];
                            }
                        }
                        let nf = n as f64;
                        for i in 0..n {
                            for j in 0..f {
                                let k = i * f + j;
                                let dh = g[k] * gd[j];
                                dx[k] = inv_std[j] / nf * (nf * dh - sum_dh[j] - xhat[k] * sum_dh_h[j]);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..f {
                                dx[i * f + j] = g[i * f + j] * gd[j] * inv_std[j];
                            }
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Dropout(x, mask) => {
                self.acc(grads, *x, g.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::PairMaxPool(x, winners) => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (o, w) in winners.iter().enumerate() {
                    if let Some(i) = w {
                        d[*i] += g[o];
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, vec![g[0] / n.max(1) as f64; n]);
            }
            Op::SumSquares(a) => {
                let d = self.data(*a).iter().map(|x| 2.0 * x * g[0]).collect();
                self.acc(grads, *a, d);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len().max(1);
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= scale;
                }
                self.acc(grads, *logits, d);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
