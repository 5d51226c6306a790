use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, Objective};
use crate::nn::{ParamBuilder, ParamStore};

use super::spec::{ModelKind, ModelSpec};
use super::{BuiltModel, Network};

/// A model family that can be instantiated from a [`ModelSpec`].
pub trait Architecture: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Registers parameters through `pb` and returns the forward structure.
    /// `spec` has already been validated.
    fn build(&self, spec: &ModelSpec, pb: &mut ParamBuilder<'_>) -> Result<Arc<dyn Network>>;

    /// Training objective for this family.
    fn objective(&self, _loss: &LossConfig) -> Objective {
        Objective::CrossEntropy
    }
}

/// Architectures keyed by name.
#[derive(Default)]
pub struct ModelRegistry {
    entries: BTreeMap<&'static str, Box<dyn Architecture>>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the four built-in families.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(super::networks::FcnArchitecture));
        r.register(Box::new(super::networks::CnnArchitecture));
        r.register(Box::new(super::networks::ConcatArchitecture));
        r.register(Box::new(super::networks::RenoArchitecture));
        r
    }

    /// Process-wide registry of the built-in families.
    pub fn global() -> &'static ModelRegistry {
        static GLOBAL: OnceLock<ModelRegistry> = OnceLock::new();
        GLOBAL.get_or_init(ModelRegistry::with_builtins)
    }

    /// Adds or replaces an architecture under its name.
    pub fn register(&mut self, arch: Box<dyn Architecture>) {
        self.entries.insert(arch.name(), arch);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Architecture> {
        self.entries.get(name).map(|a| a.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn lookup(&self, kind: ModelKind) -> Result<&dyn Architecture> {
        self.get(kind.name())
            .ok_or_else(|| Error::config(format!("no architecture registered as `{kind}`")))
    }

    /// Validates `spec` and builds a freshly initialised model.
    pub fn build(&self, spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
        spec.validate()?;
        let arch = self.lookup(spec.kind)?;
        let mut params = ParamStore::new();
        let network = arch.build(spec, &mut ParamBuilder::new(&mut params, seed))?;
        Ok(BuiltModel {
            spec: spec.clone(),
            network,
            params,
        })
    }
}
