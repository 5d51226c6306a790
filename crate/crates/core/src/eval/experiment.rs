use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, validation_split, EmbeddingDataset, FoldPlan};
use crate::error::{Error, Result};
use crate::models::{build, BuiltModel, ModelSpec};

use super::metrics::mean_std;
use super::train::{check_views, train_fold, FoldSplit, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    #[serde(rename = "fold")]
    pub fold_index: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub epochs_run: usize,
    pub param_count: usize,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

impl ExperimentReport {
    pub fn from_folds(model: ModelSpec, train: TrainConfig, folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
        ExperimentReport {
            model,
            train,
            folds,
            mean_accuracy,
            std_accuracy,
            mean_macro_f1,
            std_macro_f1,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Sum of all confusion entries over all folds.
    pub fn tested_samples(&self) -> u64 {
        self.folds
            .iter()
            .flat_map(|f| f.confusion.iter().flatten())
            .sum()
    }
}

/// Seed of fold `fold`: the experiment seed plus the fold index.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Train, validation and test rows of fold `fold`.
pub fn fold_split(plan: &FoldPlan, labels: &[usize], num_classes: usize, fold: usize, seed: u64) -> Result<FoldSplit> {
    let (train, validation) = validation_split(labels, num_classes, &plan.train_indices(fold), seed)?;
    Ok(FoldSplit {
        train,
        validation,
        test: plan.test_indices(fold),
    })
}

/// Runs every fold of `plan` with a fresh model and returns the results
/// together with the trained models, in fold order. `parallel_folds > 1`
/// trains that many folds at once; results do not depend on it.
pub fn run_folds(
    spec: &ModelSpec,
    views: &[EmbeddingDataset],
    config: &TrainConfig,
    plan: &FoldPlan,
    parallel_folds: usize,
) -> Result<Vec<(FoldResult, BuiltModel)>> {
    config.validate()?;
    spec.validate()?;
    if views.is_empty() {
        return Err(Error::config("no input views"));
    }
    if plan.assignments.len() != views[0].len() {
        return Err(Error::Alignment {
            what: "fold plan".into(),
            left: plan.assignments.len(),
            other: "dataset".into(),
            right: views[0].len(),
        });
    }
    let run = |fold: usize| -> Result<(FoldResult, BuiltModel)> {
        let seed = fold_seed(config.seed, fold);
        let attach = |e| Error::Fold {
            fold,
            source: Box::new(e),
        };
        let mut model = build(spec, seed).map_err(attach)?;
        check_views(&model, views).map_err(attach)?;
        let split =
            fold_split(plan, &views[0].labels, spec.num_classes, fold, seed).map_err(attach)?;
        let fold_config = TrainConfig {
            seed,
            ..config.clone()
        };
        let outcome = train_fold(&mut model, views, &split, &fold_config).map_err(attach)?;
        log::info!(
            "{} fold {fold}: accuracy {:.4}, macro-F1 {:.4}, {} epochs",
            spec.kind,
            outcome.metrics.accuracy,
            outcome.metrics.macro_f1,
            outcome.epochs_run
        );
        let result = FoldResult {
            fold_index: fold,
            accuracy: outcome.metrics.accuracy,
            macro_f1: outcome.metrics.macro_f1,
            epochs_run: outcome.epochs_run,
            param_count: model.param_count(),
            confusion: outcome.metrics.confusion,
        };
        Ok((result, model))
    };
    if parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel_folds)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..plan.k).into_par_iter().map(run).collect())
    } else {
        (0..plan.k).map(run).collect()
    }
}

/// Stratified k-fold cross-validation of one model family.
pub fn run_experiment(
    spec: &ModelSpec,
    views: &[EmbeddingDataset],
    config: &TrainConfig,
    k: usize,
    parallel_folds: usize,
) -> Result<ExperimentReport> {
    let first = views.first().ok_or_else(|| Error::config("no input views"))?;
    let plan = stratified_kfold(first, k, config.seed)?;
    let folds = run_folds(spec, views, config, &plan, parallel_folds)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    Ok(ExperimentReport::from_folds(spec.clone(), config.clone(), folds))
}
