//! The four network families: single-view dense and convolutional
//! classifiers, a concatenation fusion baseline, and the attention fusion
//! model whose two branch projections feed the alignment loss.

mod blocks;
mod checkpoint;
mod networks;
mod registry;
mod spec;

use std::fmt::Debug;
use std::sync::Arc;

pub use blocks::{attention_block, ClassifierHead, ConvFrontEnd, FusionBranch};
pub use networks::{
    CnnArchitecture, CnnNet, ConcatArchitecture, FcnArchitecture, FcnNet, FusionNet,
    RenoArchitecture,
};
pub use registry::{Architecture, ModelRegistry};
pub use spec::{ModelKind, ModelSpec, CONV_CHANNELS, CONV_KERNEL, HIDDEN, MIN_CONV_INPUT};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, Objective};
use crate::nn::{Graph, ParamStore, Scalar, Tensor, Var};

/// Nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    /// `[batch, num_classes]`, rows on the simplex.
    pub probs: Var,
    /// The two projected branch features compared by the alignment loss.
    pub taps: Option<(Var, Var)>,
}

pub trait Forward<T: Scalar> {
    /// One forward pass; `inputs` holds one `[batch, dim]` node per view.
    fn forward(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<NetOutput>;
}

/// A network structure runnable in training (`f32`) and checking (`f64`)
/// precision.
pub trait Network: Forward<f32> + Forward<f64> + Debug + Send + Sync {
    fn kind(&self) -> ModelKind;
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    pub network: Arc<dyn Network>,
    pub params: ParamStore<f32>,
}

impl BuiltModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn has_alignment_taps(&self) -> bool {
        self.spec.kind == ModelKind::Reno
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    /// Objective the model family trains with.
    pub fn objective(&self, loss: &LossConfig) -> Result<Objective> {
        Ok(ModelRegistry::global()
            .lookup(self.spec.kind)?
            .objective(loss))
    }

    /// Evaluation-mode class probabilities for one batch.
    pub fn predict_proba(&self, views: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut g = Graph::new(&self.params);
        let inputs: Vec<Var> = views.iter().map(|v| g.input(v.clone())).collect();
        let out = Forward::<f32>::forward(self.network.as_ref(), &mut g, &inputs)?;
        Ok(g.value(out.probs).clone())
    }

    /// Evaluation-mode predictions, processed in chunks of `batch` rows.
    pub fn predict(&self, views: &[Tensor<f32>], batch: usize) -> Result<Vec<usize>> {
        let rows = views
            .first()
            .map(|v| v.shape()[0])
            .ok_or_else(|| Error::config("no input views"))?;
        let mut out = Vec::with_capacity(rows);
        let idx: Vec<usize> = (0..rows).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let part: Vec<Tensor<f32>> = views.iter().map(|v| v.select_rows(chunk)).collect();
            out.extend(self.predict_proba(&part)?.argmax_rows());
        }
        Ok(out)
    }
}

/// Number of trainable scalars.
pub fn param_count(params: &ParamStore<f32>) -> usize {
    params.scalar_count()
}

/// Builds any registered model kind.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    ModelRegistry::global().build(spec, seed)
}

fn build_kind(kind: ModelKind, spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    if spec.kind != kind {
        return Err(Error::config(format!(
            "spec describes a {} model, not {kind}",
            spec.kind
        )));
    }
    build(spec, seed)
}

pub fn build_fcn(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    build_kind(ModelKind::Fcn, spec, seed)
}

pub fn build_cnn(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    build_kind(ModelKind::Cnn, spec, seed)
}

pub fn build_concat_fusion(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    build_kind(ModelKind::Concat, spec, seed)
}

pub fn build_reno(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    build_kind(ModelKind::Reno, spec, seed)
}
