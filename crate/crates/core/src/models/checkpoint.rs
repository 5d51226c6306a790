use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::{build, BuiltModel, ModelSpec};

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    spec: ModelSpec,
    params: Vec<SavedParam>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl BuiltModel {
    /// Writes the model spec and parameter values as JSON. Optimizer state is not
    /// kept.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| SavedParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds the model from its spec and loads the saved values.
    pub fn load_checkpoint(path: &Path) -> Result<BuiltModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let mut model = build(&ckpt.spec, 0)?;
        let layout = model.params.layout();
        let mismatch = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if layout.len() != ckpt.params.len() {
            return Err(mismatch(format!(
                "{} parameters saved, model has {}",
                ckpt.params.len(),
                layout.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.len());
        for ((name, shape), saved) in layout.iter().zip(ckpt.params) {
            if *name != saved.name || *shape != saved.shape {
                return Err(mismatch(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    saved.name, saved.shape
                )));
            }
            values.push(
                Tensor::new(saved.shape, saved.values)
                    .map_err(|e| mismatch(format!("{name}: {e}")))?,
            );
        }
        model.params.restore(&values)?;
        Ok(model)
    }
}
