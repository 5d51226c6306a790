use std::sync::Arc;

use crate::error::{Error, Result};
use crate::losses::{LossConfig, Objective};
use crate::nn::{Graph, ParamBuilder, Scalar, SelfAttention, Var};

use super::blocks::{attention_block, ClassifierHead, ConvFrontEnd, FusionBranch};
use super::registry::Architecture;
use super::spec::{ModelKind, ModelSpec};
use super::{Forward, NetOutput, Network};

fn check_inputs<T: Scalar>(
    g: &Graph<'_, T>,
    inputs: &[Var],
    dims: &[usize],
) -> Result<usize> {
    if inputs.len() != dims.len() {
        return Err(Error::config(format!(
            "model takes {} input view(s), got {}",
            dims.len(),
            inputs.len()
        )));
    }
    let batch = g.shape(inputs[0])[0];
    for (&v, &d) in inputs.iter().zip(dims) {
        let s = g.shape(v);
        if s.len() != 2 || s[0] != batch || s[1] != d {
            return Err(Error::Dimension {
                op: "model input",
                lhs: s.to_vec(),
                rhs: vec![batch, d],
            });
        }
    }
    Ok(batch)
}

/// Dense classifier on a single embedding.
#[derive(Debug)]
pub struct FcnNet {
    dim: usize,
    head: ClassifierHead,
}

impl<T: Scalar> Forward<T> for FcnNet {
    fn forward(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<NetOutput> {
        check_inputs(g, inputs, &[self.dim])?;
        Ok(NetOutput {
            probs: self.head.forward(g, inputs[0])?,
            taps: None,
        })
    }
}

impl Network for FcnNet {
    fn kind(&self) -> ModelKind {
        ModelKind::Fcn
    }
}

/// Convolutional front end, flatten, dense classifier.
#[derive(Debug)]
pub struct CnnNet {
    dim: usize,
    front: ConvFrontEnd,
    head: ClassifierHead,
}

impl<T: Scalar> Forward<T> for CnnNet {
    fn forward(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<NetOutput> {
        let batch = check_inputs(g, inputs, &[self.dim])?;
        let h = self.front.forward(g, inputs[0])?;
        let flat = g.reshape(h, vec![batch, self.front.flat_width()])?;
        Ok(NetOutput {
            probs: self.head.forward(g, flat)?,
            taps: None,
        })
    }
}

impl Network for CnnNet {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }
}

/// Two-view fusion network. With attention it is the alignment-regularised
/// fusion model (taps exposed, attention per branch and after fusion);
/// without, the plain concatenation baseline.
#[derive(Debug)]
pub struct FusionNet {
    kind: ModelKind,
    dims: [usize; 2],
    branches: [FusionBranch; 2],
    fusion_attention: Option<SelfAttention>,
    common_dim: usize,
    head: ClassifierHead,
}

impl<T: Scalar> Forward<T> for FusionNet {
    fn forward(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<NetOutput> {
        let batch = check_inputs(g, inputs, &self.dims)?;
        let a = self.branches[0].forward(g, inputs[0])?;
        let b = self.branches[1].forward(g, inputs[1])?;
        let fused = g.concat(a, b)?;
        let fused = match &self.fusion_attention {
            Some(attn) => {
                let tokens = g.reshape(fused, vec![batch, 2, self.common_dim])?;
                let h = attention_block(g, attn, tokens)?;
                g.reshape(h, vec![batch, 2 * self.common_dim])?
            }
            None => fused,
        };
        Ok(NetOutput {
            probs: self.head.forward(g, fused)?,
            taps: (self.kind == ModelKind::Reno).then_some((a, b)),
        })
    }
}

impl Network for FusionNet {
    fn kind(&self) -> ModelKind {
        self.kind
    }
}

pub struct FcnArchitecture;
pub struct CnnArchitecture;
pub struct ConcatArchitecture;
pub struct RenoArchitecture;

impl Architecture for FcnArchitecture {
    fn kind(&self) -> ModelKind {
        ModelKind::Fcn
    }

    fn build(&self, spec: &ModelSpec, pb: &mut ParamBuilder<'_>) -> Result<Arc<dyn Network>> {
        let dim = spec.input_dims[0];
        Ok(Arc::new(FcnNet {
            dim,
            head: ClassifierHead::new(pb, dim, spec.num_classes, spec.dropout_rate),
        }))
    }
}

impl Architecture for CnnArchitecture {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn build(&self, spec: &ModelSpec, pb: &mut ParamBuilder<'_>) -> Result<Arc<dyn Network>> {
        let front = ConvFrontEnd::new(pb, "features", spec.pooled_tokens);
        let head = ClassifierHead::new(pb, front.flat_width(), spec.num_classes, spec.dropout_rate);
        Ok(Arc::new(CnnNet {
            dim: spec.input_dims[0],
            front,
            head,
        }))
    }
}

fn build_fusion(
    kind: ModelKind,
    spec: &ModelSpec,
    pb: &mut ParamBuilder<'_>,
) -> Result<Arc<dyn Network>> {
    let heads = (kind == ModelKind::Reno).then_some(spec.heads);
    let branches = [
        FusionBranch::new(pb, "branch0", spec.pooled_tokens, spec.common_dim, heads)?,
        FusionBranch::new(pb, "branch1", spec.pooled_tokens, spec.common_dim, heads)?,
    ];
    let fusion_attention = heads
        .map(|h| SelfAttention::new(pb, "fusion.attn", spec.common_dim, h))
        .transpose()?;
    let head = ClassifierHead::new(pb, 2 * spec.common_dim, spec.num_classes, spec.dropout_rate);
    Ok(Arc::new(FusionNet {
        kind,
        dims: [spec.input_dims[0], spec.input_dims[1]],
        branches,
        fusion_attention,
        common_dim: spec.common_dim,
        head,
    }))
}

impl Architecture for ConcatArchitecture {
    fn kind(&self) -> ModelKind {
        ModelKind::Concat
    }

    fn build(&self, spec: &ModelSpec, pb: &mut ParamBuilder<'_>) -> Result<Arc<dyn Network>> {
        build_fusion(ModelKind::Concat, spec, pb)
    }
}

impl Architecture for RenoArchitecture {
    fn kind(&self) -> ModelKind {
        ModelKind::Reno
    }

    fn build(&self, spec: &ModelSpec, pb: &mut ParamBuilder<'_>) -> Result<Arc<dyn Network>> {
        build_fusion(ModelKind::Reno, spec, pb)
    }

    fn objective(&self, loss: &LossConfig) -> Objective {
        Objective::Joint(*loss)
    }
}
