use crate::error::{Error, Result};
use crate::nn::{ConvBlock, Dense, Graph, ParamBuilder, Scalar, SelfAttention, Var};

use super::spec::{CONV_CHANNELS, CONV_KERNEL, HIDDEN};

/// Dense 512 → ReLU → dropout → dense 128 → ReLU → dropout → dense C → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub output: Dense,
    pub dropout: f64,
}

impl ClassifierHead {
    pub fn new(pb: &mut ParamBuilder<'_>, d_in: usize, classes: usize, dropout: f64) -> Self {
        ClassifierHead {
            hidden1: Dense::new(pb, "head.fc1", d_in, HIDDEN[0]),
            hidden2: Dense::new(pb, "head.fc2", HIDDEN[0], HIDDEN[1]),
            output: Dense::new(pb, "head.out", HIDDEN[1], classes),
            dropout,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.hidden1.forward(g, x)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, self.dropout)?;
        let h = self.hidden2.forward(g, h)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, self.dropout)?;
        let logits = self.output.forward(g, h)?;
        Ok(g.softmax(logits))
    }
}

/// Two convolution blocks followed by adaptive max pooling:
/// `[batch, dim]` → `[batch, 64, pooled_tokens]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFrontEnd {
    pub block1: ConvBlock,
    pub block2: ConvBlock,
    pub pooled_tokens: usize,
}

impl ConvFrontEnd {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, pooled_tokens: usize) -> Self {
        ConvFrontEnd {
            block1: ConvBlock::new(pb, &format!("{name}.conv1"), 1, CONV_CHANNELS[0], CONV_KERNEL),
            block2: ConvBlock::new(
                pb,
                &format!("{name}.conv2"),
                CONV_CHANNELS[0],
                CONV_CHANNELS[1],
                CONV_KERNEL,
            ),
            pooled_tokens,
        }
    }

    pub fn channels(&self) -> usize {
        self.block2.filters
    }

    /// Width after flattening the pooled feature map.
    pub fn flat_width(&self) -> usize {
        self.channels() * self.pooled_tokens
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (batch, dim) = (s[0], s[1]);
        let seq_len = self
            .block1
            .out_len(dim)
            .and_then(|l| self.block2.out_len(l))
            .unwrap_or(0);
        if seq_len == 0 {
            return Err(Error::InputTooShort {
                op: "conv front end",
                length: dim,
                required: super::spec::MIN_CONV_INPUT,
            });
        }
        let h = g.reshape(x, vec![batch, 1, dim])?;
        let h = self.block1.forward(g, h)?;
        let h = self.block2.forward(g, h)?;
        g.adaptive_max_pool(h, self.pooled_tokens)
    }
}

/// Per-view feature extractor of the fusion models: conv front end,
/// optional self-attention over pooled positions, flatten, projection to the
/// shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBranch {
    pub front: ConvFrontEnd,
    pub attention: Option<SelfAttention>,
    pub projection: Dense,
}

impl FusionBranch {
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        name: &str,
        pooled_tokens: usize,
        common_dim: usize,
        attention_heads: Option<usize>,
    ) -> Result<Self> {
        let front = ConvFrontEnd::new(pb, name, pooled_tokens);
        let attention = attention_heads
            .map(|h| SelfAttention::new(pb, &format!("{name}.attn"), front.channels(), h))
            .transpose()?;
        let projection = Dense::new(pb, &format!("{name}.proj"), front.flat_width(), common_dim);
        Ok(FusionBranch {
            front,
            attention,
            projection,
        })
    }

    /// `[batch, dim]` → `[batch, common_dim]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let batch = g.shape(x)[0];
        let h = self.front.forward(g, x)?;
        let flat = match &self.attention {
            Some(attn) => {
                // positions become tokens, channels their embedding
                let tokens = g.transpose_last2(h)?;
                let a = attention_block(g, attn, tokens)?;
                g.reshape(a, vec![batch, self.front.flat_width()])?
            }
            None => g.reshape(h, vec![batch, self.front.flat_width()])?,
        };
        self.projection.forward(g, flat)
    }
}

/// Self-attention with an identity skip: `x + MSA(x)`. Without the skip,
/// near-uniform attention averages the tokens and discards their positions.
pub fn attention_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    attn: &SelfAttention,
    x: Var,
) -> Result<Var> {
    let a = attn.forward(g, x)?;
    g.weighted_sum(x, 1.0, a, 1.0)
}
