//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! record in reverse and returns the gradient of a scalar with respect to
//! every node, including the parameter leaves pulled from a [`ParamStore`].
//!
//! Non-smooth choices (ReLU masks, pooling argmax positions) can be recorded
//! on one pass and replayed on later passes. The gradient checker uses this so
//! that its finite differences evaluate the same piecewise-smooth branch that
//! the analytic backward pass differentiates.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::param::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A recorded non-smooth choice.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    Mask(Vec<bool>),
    Index(Vec<usize>),
}

#[derive(Debug)]
enum Routing {
    Free,
    Record(Vec<Route>),
    Replay { routes: Vec<Route>, cursor: usize },
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    /// Elementwise product with a constant mask (ReLU, dropout).
    Mask { x: Var, mask: Vec<T> },
    Scale { x: Var, factor: T },
    GradScale { x: Var, factor: T },
    Softmax { x: Var },
    /// `out[i] = x[index[i]]`; covers pooling, transposes and head splits.
    Gather { x: Var, index: Vec<usize> },
    Reshape { x: Var },
    Concat { a: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var },
    CrossEntropy { p: Var, labels: Vec<usize> },
    Renyi { p: Var, q: Var, beta: f64, delta: f64, sums: Vec<f64> },
    WeightedSum { a: Var, wa: T, b: Var, wb: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Stabiliser inside the cross-entropy logarithm.
pub const CE_EPS: f64 = 1e-12;

pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    params: &'p ParamStore<T>,
    param_nodes: HashMap<ParamId, Var>,
    rng: Option<ChaCha8Rng>,
    routing: Routing,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Evaluation graph: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            nodes: Vec::new(),
            params,
            param_nodes: HashMap::new(),
            rng: None,
            routing: Routing::Free,
        }
    }

    /// Training graph: dropout masks are drawn from a stream seeded by `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        let mut g = Self::new(params);
        g.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        g
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn record_routes(mut self) -> Self {
        self.routing = Routing::Record(Vec::new());
        self
    }

    pub(crate) fn replay_routes(mut self, routes: Vec<Route>) -> Self {
        self.routing = Routing::Replay { routes, cursor: 0 };
        self
    }

    pub(crate) fn take_routes(&mut self) -> Vec<Route> {
        match std::mem::replace(&mut self.routing, Routing::Free) {
            Routing::Record(r) => r,
            Routing::Replay { routes, .. } => routes,
            Routing::Free => Vec::new(),
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Either the freshly computed route (recorded if requested) or the
    /// replayed one.
    fn route(routing: &mut Routing, fresh: impl FnOnce() -> Route) -> Result<Route> {
        match routing {
            Routing::Free => Ok(fresh()),
            Routing::Record(log) => {
                let r = fresh();
                log.push(r.clone());
                Ok(r)
            }
            Routing::Replay { routes, cursor } => {
                let r = routes.get(*cursor).cloned().ok_or_else(|| {
                    Error::config("replayed graph has more routed ops than the recording")
                })?;
                *cursor += 1;
                Ok(r)
            }
        }
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param);
        self.param_nodes.insert(id, v);
        v
    }

    /// `x[..., d_in] · w[d_in, d_out] + b[d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine(x, w, Some(b))
    }

    /// `x[..., d_in] · w[d_in, d_out]` without bias.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let d_in = *xs.last().unwrap();
        let bias_ok = b.is_none_or(|b| ws.len() == 2 && self.shape(b) == [ws[1]]);
        if ws.len() != 2 || ws[0] != d_in || !bias_ok {
            return Err(Error::Dimension {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let d_out = ws[1];
        let rows = self.value(x).len() / d_in;
        let mut out = match b {
            Some(b) => {
                let bias = self.value(b).data();
                let mut out = Vec::with_capacity(rows * d_out);
                for _ in 0..rows {
                    out.extend_from_slice(bias);
                }
                out
            }
            None => vec![T::zero(); rows * d_out],
        };
        gemm_nn(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            rows,
            d_in,
            d_out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }))
    }

    /// Batched product of `a[g, n, k]` with `b[g, k, m]`, or with
    /// `b[g, m, k]ᵀ` when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        let bad = || Error::Dimension {
            op: "batch_matmul",
            lhs: as_.clone(),
            rhs: bs.clone(),
        };
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return Err(bad());
        }
        let (g, n, k) = (as_[0], as_[1], as_[2]);
        let (bk, m) = if transpose_b {
            (bs[2], bs[1])
        } else {
            (bs[1], bs[2])
        };
        if bk != k {
            return Err(bad());
        }
        let mut out = vec![T::zero(); g * n * m];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            let a_i = &ad[i * n * k..(i + 1) * n * k];
            let b_i = &bd[i * k * m..(i + 1) * k * m];
            let c_i = &mut out[i * n * m..(i + 1) * n * m];
            if transpose_b {
                gemm_nt(a_i, b_i, c_i, n, k, m);
            } else {
                gemm_nn(a_i, b_i, c_i, n, k, m);
            }
        }
        Ok(self.push(
            Tensor::new(vec![g, n, m], out)?,
            Op::BatchMatMul { a, b, transpose_b },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let route = {
            let data = self.nodes[x.0].value.data();
            Self::route(&mut self.routing, || Route::Mask(data.iter().map(|&v| v > T::zero()).collect()))?
        };
        let Route::Mask(mask) = route else {
            return Err(Error::config("replayed route is not a mask"));
        };
        if mask.len() != self.value(x).len() {
            return Err(Error::config("replayed mask length differs"));
        }
        let mask: Vec<T> = mask
            .into_iter()
            .map(|m| if m { T::one() } else { T::zero() })
            .collect();
        Ok(self.apply_mask(x, mask))
    }

    fn apply_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Mask { x, mask })
    }

    /// Inverted dropout; identity on evaluation graphs or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let n = self.value(x).len();
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Ok(self.apply_mask(x, mask))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = T::of(factor);
        let xv = self.value(x);
        let data = xv.data().iter().map(|&a| a * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x, factor })
    }

    /// Identity forward; multiplies the incoming gradient by `factor`.
    pub fn grad_scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).clone();
        self.push(
            value,
            Op::GradScale {
                x,
                factor: T::of(factor),
            },
        )
    }

    /// Softmax over the trailing axis, stabilised by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut sum = T::zero();
            for &v in row {
                let e = (v - max).exp();
                sum += e;
                out.push(e);
            }
            let inv = T::one() / sum;
            for e in &mut out[start..] {
                *e *= inv;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Softmax { x })
    }

    /// `out[i] = x[index[i]]` with the given output shape.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= xv.len())
        {
            return Err(Error::Dimension {
                op: "gather",
                lhs: xv.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather { x, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Dimension {
                op: "transpose_last2",
                lhs: s,
                rhs: vec![3],
            });
        }
        let (b, r, c) = (s[0], s[1], s[2]);
        let mut index = Vec::with_capacity(b * r * c);
        for bi in 0..b {
            for ci in 0..c {
                for ri in 0..r {
                    index.push(bi * r * c + ri * c + ci);
                }
            }
        }
        self.gather(x, index, vec![b, c, r])
    }

    /// Concatenation of `a[n, p]` and `b[n, q]` along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Dimension {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        Ok(self.push(Tensor::new(vec![n, p + q], out)?, Op::Concat { a, b }))
    }

    /// Valid (unpadded) stride-1 convolution: `x[batch, c_in, len]`,
    /// `w[c_out, c_in, kernel]`, `b[c_out]` → `[batch, c_out, len - kernel + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        if len < kernel {
            return Err(Error::InputTooShort {
                op: "conv1d",
                length: len,
                required: kernel,
            });
        }
        let out_len = len - kernel + 1;
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![T::zero(); batch * c_out * out_len];
        for bi in 0..batch {
            for o in 0..c_out {
                let y = &mut out[(bi * c_out + o) * out_len..][..out_len];
                y.fill(bd[o]);
                for c in 0..c_in {
                    let xrow = &xd[(bi * c_in + c) * len..][..len];
                    for k in 0..kernel {
                        let wv = wd[(o * c_in + c) * kernel + k];
                        for (yt, &xv) in y.iter_mut().zip(&xrow[k..k + out_len]) {
                            *yt += wv * xv;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![batch, c_out, out_len], out)?,
            Op::Conv1d { x, w, b },
        ))
    }

    /// Max pooling over the last axis of `[batch, channels, len]`, window 2,
    /// stride 2; output length `len / 2`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[2] < 2 {
            return Err(Error::InputTooShort {
                op: "max_pool2",
                length: s.last().copied().unwrap_or(0),
                required: 2,
            });
        }
        let out_len = s[2] / 2;
        let bins: Vec<(usize, usize)> = (0..out_len).map(|i| (2 * i, 2 * i + 2)).collect();
        self.pool_bins(x, &bins)
    }

    /// Adaptive max pooling of the last axis to `positions` bins; bin `i`
    /// covers `[floor(i·L/P), ceil((i+1)·L/P))`, so bins overlap when
    /// `P > L`.
    pub fn adaptive_max_pool(&mut self, x: Var, positions: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || positions == 0 {
            return Err(Error::Dimension {
                op: "adaptive_max_pool",
                lhs: s,
                rhs: vec![positions],
            });
        }
        let len = s[2];
        let bins: Vec<(usize, usize)> = (0..positions)
            .map(|i| ((i * len) / positions, ((i + 1) * len).div_ceil(positions)))
            .collect();
        self.pool_bins(x, &bins)
    }

    fn pool_bins(&mut self, x: Var, bins: &[(usize, usize)]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (rows, len) = (s[0] * s[1], s[2]);
        let route = {
            let data = self.nodes[x.0].value.data();
            Self::route(&mut self.routing, || {
                let mut index = Vec::with_capacity(rows * bins.len());
                for r in 0..rows {
                    let row = &data[r * len..(r + 1) * len];
                    for &(lo, hi) in bins {
                        let mut best = lo;
                        for t in lo + 1..hi {
                            if row[t] > row[best] {
                                best = t;
                            }
                        }
                        index.push(r * len + best);
                    }
                }
                Route::Index(index)
            })?
        };
        let Route::Index(index) = route else {
            return Err(Error::config("replayed route is not an index list"));
        };
        self.gather(x, index, vec![s[0], s[1], bins.len()])
    }

    /// Mean over the batch of `-ln(p[label] + 1e-12)`; `p` is `[batch, classes]`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let ps = self.shape(p).to_vec();
        if ps.len() != 2 || ps[0] != labels.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: ps,
                rhs: vec![labels.len()],
            });
        }
        let classes = ps[1];
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label {
                row,
                label,
                num_classes: classes,
            });
        }
        let pd = self.value(p).data();
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(pd[i * classes + l].as_f64() + CE_EPS).ln())
            .sum();
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                p,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Batch mean of `1/(β-1) · ln Σ_j (p_j + δ)^β (q_j + δ)^(1-β)` over rows
    /// of two `[batch, m]` tensors.
    pub fn renyi(&mut self, p: Var, q: Var, beta: f64, delta: f64) -> Result<Var> {
        let (ps, qs) = (self.shape(p).to_vec(), self.shape(q).to_vec());
        if ps.len() != 2 || ps != qs {
            return Err(Error::Dimension {
                op: "renyi",
                lhs: ps,
                rhs: qs,
            });
        }
        if beta <= 1.0 || delta <= 0.0 {
            return Err(Error::config(format!(
                "renyi needs beta > 1 and delta > 0, got beta = {beta}, delta = {delta}"
            )));
        }
        let m = ps[1];
        let (pd, qd) = (self.value(p).data(), self.value(q).data());
        let sums: Vec<f64> = pd
            .chunks(m)
            .zip(qd.chunks(m))
            .map(|(pr, qr)| {
                pr.iter()
                    .zip(qr)
                    .map(|(&a, &b)| {
                        (a.as_f64() + delta).powf(beta) * (b.as_f64() + delta).powf(1.0 - beta)
                    })
                    .sum()
            })
            .collect();
        let loss = sums.iter().map(|s| s.ln()).sum::<f64>() / ((beta - 1.0) * sums.len() as f64);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::Renyi {
                p,
                q,
                beta,
                delta,
                sums,
            },
        ))
    }

    /// `wa·a + wb·b` for same-shaped tensors.
    pub fn weighted_sum(&mut self, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::Dimension {
                op: "weighted_sum",
                lhs: sa,
                rhs: sb,
            });
        }
        let (wa, wb) = (T::of(wa), T::of(wb));
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| wa * x + wb * y)
            .collect();
        Ok(self.push(Tensor::new(sa, data)?, Op::WeightedSum { a, wa, b, wb }))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn backprop_node(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, &self.nodes, $v)
            };
        }
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / d_in;
                gemm_nt(gy, wv.data(), acc!(*x), rows, d_out, d_in);
                gemm_tn(xv.data(), gy, acc!(*w), rows, d_in, d_out);
                if let Some(b) = b {
                    let gb = acc!(*b);
                    for row in gy.chunks(d_out) {
                        for (g, &r) in gb.iter_mut().zip(row) {
                            *g += r;
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (g, n, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let m = node.value.shape()[2];
                for j in 0..g {
                    let gy_j = &gy[j * n * m..(j + 1) * n * m];
                    let a_j = &av.data()[j * n * k..(j + 1) * n * k];
                    let b_j = &bv.data()[j * k * m..(j + 1) * k * m];
                    if *transpose_b {
                        gemm_nn(gy_j, b_j, &mut acc!(*a)[j * n * k..(j + 1) * n * k], n, m, k);
                        gemm_tn(gy_j, a_j, &mut acc!(*b)[j * k * m..(j + 1) * k * m], n, m, k);
                    } else {
                        gemm_nt(gy_j, b_j, &mut acc!(*a)[j * n * k..(j + 1) * n * k], n, m, k);
                        gemm_tn(a_j, gy_j, &mut acc!(*b)[j * k * m..(j + 1) * k * m], n, k, m);
                    }
                }
            }
            Op::Mask { x, mask } => {
                for ((g, &d), &m) in acc!(*x).iter_mut().zip(gy).zip(mask) {
                    *g += d * m;
                }
            }
            Op::Scale { x, factor } | Op::GradScale { x, factor } => {
                for (g, &d) in acc!(*x).iter_mut().zip(gy) {
                    *g += d * *factor;
                }
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                let gx = acc!(*x);
                for ((gr, yr), dr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                    let inner: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for ((g, &yv), &d) in gr.iter_mut().zip(yr).zip(dr) {
                        *g += yv * (d - inner);
                    }
                }
            }
            Op::Gather { x, index } => {
                let gx = acc!(*x);
                for (&src, &d) in index.iter().zip(gy) {
                    gx[src] += d;
                }
            }
            Op::Reshape { x } => {
                for (g, &d) in acc!(*x).iter_mut().zip(gy) {
                    *g += d;
                }
            }
            Op::Concat { a, b } => {
                let p = self.nodes[a.0].value.shape()[1];
                let q = self.nodes[b.0].value.shape()[1];
                {
                    let ga = acc!(*a);
                    for (r, row) in gy.chunks(p + q).enumerate() {
                        for (g, &d) in ga[r * p..(r + 1) * p].iter_mut().zip(&row[..p]) {
                            *g += d;
                        }
                    }
                }
                let gb = acc!(*b);
                for (r, row) in gy.chunks(p + q).enumerate() {
                    for (g, &d) in gb[r * q..(r + 1) * q].iter_mut().zip(&row[p..]) {
                        *g += d;
                    }
                }
            }
            Op::Conv1d { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (batch, c_in, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (c_out, kernel) = (wv.shape()[0], wv.shape()[2]);
                let out_len = len - kernel + 1;
                {
                    let gb = acc!(*b);
                    for bi in 0..batch {
                        for o in 0..c_out {
                            let dy = &gy[(bi * c_out + o) * out_len..][..out_len];
                            gb[o] += dy.iter().copied().sum::<T>();
                        }
                    }
                }
                {
                    let gw = acc!(*w);
                    for bi in 0..batch {
                        for o in 0..c_out {
                            let dy = &gy[(bi * c_out + o) * out_len..][..out_len];
                            for c in 0..c_in {
                                let xrow = &xv.data()[(bi * c_in + c) * len..][..len];
                                for k in 0..kernel {
                                    gw[(o * c_in + c) * kernel + k] +=
                                        super::kernels::dot(dy, &xrow[k..k + out_len]);
                                }
                            }
                        }
                    }
                }
                let gx = acc!(*x);
                for bi in 0..batch {
                    for o in 0..c_out {
                        let dy = &gy[(bi * c_out + o) * out_len..][..out_len];
                        for c in 0..c_in {
                            let gxrow = &mut gx[(bi * c_in + c) * len..][..len];
                            for k in 0..kernel {
                                let wv = wv.data()[(o * c_in + c) * kernel + k];
                                for (g, &d) in gxrow[k..k + out_len].iter_mut().zip(dy) {
                                    *g += wv * d;
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { p, labels } => {
                let pv = &self.nodes[p.0].value;
                let classes = pv.shape()[1];
                let scale = gy[0].as_f64() / labels.len() as f64;
                let gp = acc!(*p);
                for (r, &l) in labels.iter().enumerate() {
                    let idx = r * classes + l;
                    gp[idx] += T::of(-scale / (pv.data()[idx].as_f64() + CE_EPS));
                }
            }
            Op::Renyi {
                p,
                q,
                beta,
                delta,
                sums,
            } => {
                let pv = &self.nodes[p.0].value;
                let qv = &self.nodes[q.0].value;
                let m = pv.shape()[1];
                let coef = gy[0].as_f64() / sums.len() as f64;
                let (beta, delta) = (*beta, *delta);
                {
                    let gp = acc!(*p);
                    for (r, &s) in sums.iter().enumerate() {
                        for j in 0..m {
                            let (a, b) = (
                                pv.data()[r * m + j].as_f64() + delta,
                                qv.data()[r * m + j].as_f64() + delta,
                            );
                            let d = beta / (beta - 1.0) * a.powf(beta - 1.0) * b.powf(1.0 - beta);
                            gp[r * m + j] += T::of(coef * d / s);
                        }
                    }
                }
                let gq = acc!(*q);
                for (r, &s) in sums.iter().enumerate() {
                    for j in 0..m {
                        let (a, b) = (
                            pv.data()[r * m + j].as_f64() + delta,
                            qv.data()[r * m + j].as_f64() + delta,
                        );
                        let d = -a.powf(beta) * b.powf(-beta);
                        gq[r * m + j] += T::of(coef * d / s);
                    }
                }
            }
            Op::WeightedSum { a, wa, b, wb } => {
                for (g, &d) in acc!(*a).iter_mut().zip(gy) {
                    *g += *wa * d;
                }
                for (g, &d) in acc!(*b).iter_mut().zip(gy) {
                    *g += *wb * d;
                }
            }
        }
    }
}

fn slot<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'g mut Vec<T> {
    let n = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node; `None` if the node does not reach
    /// the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_nodes.get(&id).and_then(|&v| self.wrt(v))
    }

    /// Writes parameter gradients into the store's gradient slots. Parameters
    /// absent from the graph, or not reaching the loss, get zeros.
    pub fn write_to(&self, store: &mut ParamStore<T>) {
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            let g = match self.param(id) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.value.len()],
            };
            p.value.set_grad(g).expect("gradient has parameter shape");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        ParamStore::new()
    }

    #[test]
    fn dense_worked_example() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::from_f64(vec![1, 2], &[1.0, 2.0]).unwrap());
        let w = g.input(Tensor::from_f64(vec![2, 2], &[1.0, 3.0, 2.0, 4.0]).unwrap());
        let b = g.input(Tensor::from_f64(vec![2], &[0.5, -0.5]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.5, 10.5]);
    }

    #[test]
    fn dense_zero_and_identity_weights() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::from_f64(vec![3, 2], &[1.0, -2.0, 0.5, 4.0, 7.0, 8.0]).unwrap());
        let zero = g.input(Tensor::zeros(vec![2, 2]));
        let b = g.input(Tensor::from_f64(vec![2], &[0.25, -1.0]).unwrap());
        let y = g.linear(x, zero, b).unwrap();
        for row in g.value(y).rows() {
            assert_eq!(row, &[0.25, -1.0]);
        }
        let eye = g.input(Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let zb = g.input(Tensor::zeros(vec![2]));
        let y = g.linear(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn dense_shape_error_names_both_shapes() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::zeros(vec![1, 3]));
        let w = g.input(Tensor::zeros(vec![2, 2]));
        let b = g.input(Tensor::zeros(vec![2]));
        let err = g.linear(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_worked_example() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::from_f64(vec![1, 1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = g.input(Tensor::from_f64(vec![1, 1, 3], &[1.0, 1.0, 1.0]).unwrap());
        let b = g.input(Tensor::zeros(vec![1]));
        let c = g.conv1d(x, w, b).unwrap();
        assert_eq!(g.value(c).data(), &[6.0, 9.0, 12.0]);
        let r = g.relu(c).unwrap();
        let p = g.max_pool2(r).unwrap();
        assert_eq!(g.value(p).data(), &[9.0]);
    }

    #[test]
    fn conv_shapes_and_short_input() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::zeros(vec![1, 1, 768]));
        let w = g.input(Tensor::zeros(vec![32, 1, 3]));
        let b = g.input(Tensor::zeros(vec![32]));
        let c = g.conv1d(x, w, b).unwrap();
        assert_eq!(g.shape(c), &[1, 32, 766]);
        let r = g.relu(c).unwrap();
        let p = g.max_pool2(r).unwrap();
        assert_eq!(g.shape(p), &[1, 32, 383]);
        assert!(g.value(p).data().iter().all(|&v| v == 0.0));

        let short = g.input(Tensor::zeros(vec![1, 1, 2]));
        let w1 = g.input(Tensor::zeros(vec![1, 1, 3]));
        let b1 = g.input(Tensor::zeros(vec![1]));
        assert!(matches!(
            g.conv1d(short, w1, b1),
            Err(Error::InputTooShort { length: 2, .. })
        ));
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let s = store();
        let mut g = Graph::new(&s);
        let data = [0.3, -1.0, 2.0, 5.0, 4.0, 1.0, 7.0];
        let x = g.input(Tensor::from_f64(vec![1, 1, 7], &data).unwrap());
        let p = g.max_pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[0.3, 5.0, 4.0]);
        let w = g.input(Tensor::from_f64(vec![3], &[1.5, -2.0, 0.25]).unwrap());
        // loss = sum(p ⊙ w), so dL/dp = w
        let pw = g.reshape(p, vec![1, 3]).unwrap();
        let ww = g.reshape(w, vec![3, 1]).unwrap();
        let zb = g.input(Tensor::zeros(vec![1]));
        let loss = g.linear(pw, ww, zb).unwrap();
        let grads = g.backward(loss).unwrap();
        let gx = grads.wrt(x).unwrap();
        assert_eq!(gx, &[1.5, 0.0, 0.0, -2.0, 0.25, 0.0, 0.0]);
        assert!((gx.iter().sum::<f64>() - (1.5 - 2.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_pool_bins() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::from_f64(vec![1, 1, 5], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap());
        let p = g.adaptive_max_pool(x, 2).unwrap();
        // bins [0,3) and [2,5)
        assert_eq!(g.value(p).data(), &[3.0, 5.0]);
        let up = g.adaptive_max_pool(x, 8).unwrap();
        assert_eq!(g.shape(up), &[1, 1, 8]);
    }

    #[test]
    fn softmax_examples() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::from_f64(vec![2, 2], &[0.0, 2f64.ln(), 3.0, 3.0]).unwrap());
        let y = g.softmax(x);
        let d = g.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[2] - 0.5).abs() < 1e-12 && (d[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn renyi_rejects_bad_order() {
        let s = store();
        let mut g = Graph::new(&s);
        let p = g.input(Tensor::full(vec![1, 2], 0.5));
        assert!(matches!(g.renyi(p, p, 1.0, 0.2), Err(Error::Config(_))));
        let q = g.input(Tensor::full(vec![1, 3], 1.0 / 3.0));
        assert!(matches!(g.renyi(p, q, 2.0, 0.2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_label_error() {
        let s = store();
        let mut g = Graph::new(&s);
        let p = g.input(Tensor::full(vec![2, 3], 1.0 / 3.0));
        let err = g.cross_entropy(p, &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::Label { row: 1, label: 3, .. }));
    }

    #[test]
    fn eval_dropout_is_identity() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::full(vec![4], 1.0));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
        let mut t = Graph::training(&s, 1);
        let x = t.input(Tensor::full(vec![1000], 1.0));
        let y = t.dropout(x, 0.5).unwrap();
        let kept = t.value(y).data().iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 400 && kept < 600);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn unreachable_params_get_zero_grads() {
        let mut s = store();
        let a = s.add("a", Tensor::full(vec![2], 1.0));
        let b = s.add("b", Tensor::full(vec![3], 1.0));
        let mut g = Graph::new(&s);
        let va = g.param(a);
        let w = g.input(Tensor::full(vec![2, 1], 2.0));
        let zb = g.input(Tensor::zeros(vec![1]));
        let r = g.reshape(va, vec![1, 2]).unwrap();
        let loss = g.linear(r, w, zb).unwrap();
        let grads = g.backward(loss).unwrap();
        drop(g);
        grads.write_to(&mut s);
        assert_eq!(s.get(a).value.grad().unwrap(), &[2.0, 2.0]);
        assert_eq!(s.get(b).value.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }
}
