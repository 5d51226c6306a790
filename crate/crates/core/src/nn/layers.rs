//! Parameterised layers. Each layer owns handles into a [`ParamStore`] and
//! can be replayed on a graph of either precision.
//!
//! [`ParamStore`]: super::param::ParamStore

use super::graph::{Graph, Var};
use super::param::{ParamBuilder, ParamId};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        Dense {
            weight: pb.dense_weight(&format!("{name}.weight"), d_in, d_out),
            bias: pb.zeros(&format!("{name}.bias"), vec![d_out]),
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }
}

/// Convolution (valid, stride 1) → ReLU → max pool (window 2, stride 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl ConvBlock {
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
    ) -> Self {
        ConvBlock {
            weight: pb.conv_weight(&format!("{name}.weight"), in_channels, filters, kernel),
            bias: pb.zeros(&format!("{name}.bias"), vec![filters]),
            in_channels,
            filters,
            kernel,
        }
    }

    /// `[batch, in_channels, len]` → `[batch, filters, (len - kernel + 1) / 2]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let c = g.conv1d(x, w, b)?;
        let r = g.relu(c)?;
        g.max_pool2(r)
    }

    /// Output length for an input of length `len`.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        len.checked_sub(self.kernel - 1).map(|l| l / 2)
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.filters * self.kernel + self.filters
    }
}

/// Multi-head scaled dot-product self-attention over `[batch, tokens, d_model]`
/// with bias-free query/key/value projections and an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_out: ParamId,
    pub d_model: usize,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "attention width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(SelfAttention {
            w_query: pb.dense_weight(&format!("{name}.w_query"), d_model, d_model),
            w_key: pb.dense_weight(&format!("{name}.w_key"), d_model, d_model),
            w_value: pb.dense_weight(&format!("{name}.w_value"), d_model, d_model),
            w_out: pb.dense_weight(&format!("{name}.w_out"), d_model, d_model),
            d_model,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.forward_with_weights(g, x).map(|(out, _)| out)
    }

    /// Output and the attention weights `[batch·heads, tokens, tokens]`.
    pub fn forward_with_weights<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.d_model {
            return Err(Error::Dimension {
                op: "self_attention",
                lhs: s,
                rhs: vec![self.d_model],
            });
        }
        let (batch, tokens) = (s[0], s[1]);
        let (wq, wk, wv, wo) = (
            g.param(self.w_query),
            g.param(self.w_key),
            g.param(self.w_value),
            g.param(self.w_out),
        );
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let split = split_heads_index(batch, tokens, self.heads, self.head_dim());
        let hs = vec![batch * self.heads, tokens, self.head_dim()];
        let q = g.gather(q, split.clone(), hs.clone())?;
        let k = g.gather(k, split.clone(), hs.clone())?;
        let v = g.gather(v, split, hs)?;
        let scores = g.batch_matmul(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (self.head_dim() as f64).sqrt());
        let weights = g.softmax(scores);
        let ctx = g.batch_matmul(weights, v, false)?;
        let merge = merge_heads_index(batch, tokens, self.heads, self.head_dim());
        let ctx = g.gather(ctx, merge, vec![batch, tokens, self.d_model])?;
        Ok((g.matmul(ctx, wo)?, weights))
    }

    pub fn param_count(&self) -> usize {
        4 * self.d_model * self.d_model
    }
}

/// `[b, t, h·e]` → `[b·h, t, e]`
fn split_heads_index(batch: usize, tokens: usize, heads: usize, dim: usize) -> Vec<usize> {
    let width = heads * dim;
    let mut index = Vec::with_capacity(batch * tokens * width);
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..tokens {
                for e in 0..dim {
                    index.push((b * tokens + t) * width + h * dim + e);
                }
            }
        }
    }
    index
}

/// `[b·h, t, e]` → `[b, t, h·e]`
fn merge_heads_index(batch: usize, tokens: usize, heads: usize, dim: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(batch * tokens * heads * dim);
    for b in 0..batch {
        for t in 0..tokens {
            for h in 0..heads {
                for e in 0..dim {
                    index.push(((b * heads + h) * tokens + t) * dim + e);
                }
            }
        }
    }
    index
}
