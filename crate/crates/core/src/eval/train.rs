use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, Objective};
use crate::models::{BuiltModel, Forward};
use crate::nn::{Adam, Graph, ParamStore, Tensor, Var};

use super::metrics::{compute_metrics, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        self.loss.validate()
    }
}

/// Row indices of one fold's three partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Tracks the best validation loss and the parameters that produced it.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64, Vec<Tensor<f32>>)>,
    epochs_run: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            epochs_run: 0,
            since_best: 0,
        }
    }

    /// Records the validation loss after `epoch` (1-based) and returns true
    /// once training should stop. Only a strict improvement resets the
    /// patience counter; NaN never counts as one.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, params: &ParamStore<f32>) -> bool {
        self.epochs_run = epoch;
        let improved = match &self.best {
            None => !val_loss.is_nan(),
            Some((_, best, _)) => val_loss < *best,
        };
        if improved {
            self.best = Some((epoch, val_loss, params.snapshot()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    /// Puts the best parameters back, if any epoch improved.
    pub fn restore_best(&self, params: &mut ParamStore<f32>) -> Result<()> {
        match &self.best {
            Some((_, _, values)) => params.restore(values),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch objective values.
    pub train_loss: f64,
    /// Cross-entropy on the validation rows, if there are any.
    pub val_cross_entropy: Option<f64>,
}

/// What [`train_fold`] produced besides the trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Metrics,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochStats>,
}

/// Checks that every view has the model's width and that all views describe
/// the same samples.
pub fn check_views(model: &BuiltModel, views: &[EmbeddingDataset]) -> Result<()> {
    let spec = &model.spec;
    if views.len() != spec.input_dims.len() {
        return Err(Error::config(format!(
            "{} model takes {} view(s), got {}",
            spec.kind,
            spec.input_dims.len(),
            views.len()
        )));
    }
    for (v, &d) in views.iter().zip(&spec.input_dims) {
        if v.dim != d {
            return Err(Error::Dimension {
                op: "model input",
                lhs: vec![v.dim],
                rhs: vec![d],
            });
        }
        if v.num_classes() != spec.num_classes {
            return Err(Error::config(format!(
                "dataset has {} classes, model expects {}",
                v.num_classes(),
                spec.num_classes
            )));
        }
    }
    let first = &views[0];
    for other in &views[1..] {
        if other.len() != first.len() {
            return Err(Error::Alignment {
                what: format!("view {}", other.fm_name),
                left: other.len(),
                other: format!("view {}", first.fm_name),
                right: first.len(),
            });
        }
        if other.labels != first.labels || other.sample_ids != first.sample_ids {
            return Err(Error::Data(format!(
                "views {} and {} list different samples or labels",
                first.fm_name, other.fm_name
            )));
        }
    }
    Ok(())
}

fn gather(views: &[EmbeddingDataset], rows: &[usize]) -> Vec<Tensor<f32>> {
    views.iter().map(|v| v.vectors.select_rows(rows)).collect()
}

/// Trains `model` in place on `split.train`, stopping early on validation
/// cross-entropy, then scores the restored best parameters on `split.test`.
pub fn train_fold(
    model: &mut BuiltModel,
    views: &[EmbeddingDataset],
    split: &FoldSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let objective = model.objective(&config.loss)?;
    train_fold_with(model, views, split, config, objective)
}

/// [`train_fold`] with an explicit objective.
pub fn train_fold_with(
    model: &mut BuiltModel,
    views: &[EmbeddingDataset],
    split: &FoldSplit,
    config: &TrainConfig,
    objective: Objective,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_views(model, views)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Data("fold has an empty train or test partition".into()));
    }
    let labels = &views[0].labels;
    let adam = Adam::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = split.train.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, rows) in batches(&order, config.batch_size).enumerate() {
            let dropout_seed: u64 = rng.random();
            let batch_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let inputs = gather(views, rows);
            let grads = {
                let mut g = Graph::training(&model.params, dropout_seed);
                let vars: Vec<Var> = inputs.into_iter().map(|t| g.input(t)).collect();
                let out = Forward::<f32>::forward(model.network.as_ref(), &mut g, &vars)?;
                let terms = objective.apply(&mut g, out.probs, out.taps, &batch_labels)?;
                let loss = g.value(terms.total).item() as f64;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b + 1,
                        loss,
                    });
                }
                loss_sum += loss;
                n_batches += 1;
                g.backward(terms.total)?
            };
            grads.write_to(&mut model.params);
            adam.step(&mut model.params)?;
        }
        model.params.clear_grads();

        let val = if split.validation.is_empty() {
            None
        } else {
            Some(mean_cross_entropy(model, views, &split.validation, config.batch_size)?)
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_cross_entropy: val,
        });
        log::debug!(
            "epoch {epoch}: train loss {:.5}, val ce {}",
            loss_sum / n_batches as f64,
            val.map_or("-".to_string(), |v| format!("{v:.5}"))
        );
        if let Some(v) = val {
            if stopper.observe(epoch, v, &model.params) {
                break;
            }
        }
    }
    let epochs_run = history.len();
    stopper.restore_best(&mut model.params)?;

    let test_inputs = gather(views, &split.test);
    let predicted = model.predict(&test_inputs, config.batch_size.max(256))?;
    let truth: Vec<usize> = split.test.iter().map(|&r| labels[r]).collect();
    Ok(TrainOutcome {
        metrics: compute_metrics(&truth, &predicted, model.spec.num_classes)?,
        epochs_run,
        best_epoch: stopper.best_epoch(),
        history,
    })
}

/// Evaluation-mode mean cross-entropy over `rows`.
pub fn mean_cross_entropy(
    model: &BuiltModel,
    views: &[EmbeddingDataset],
    rows: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let labels = &views[0].labels;
    let mut total = 0.0;
    for chunk in batches(rows, batch_size.max(256)) {
        let probs = model.predict_proba(&gather(views, chunk))?;
        for (p, &r) in probs.rows().zip(chunk) {
            total -= (p[labels[r]] as f64 + crate::nn::CE_EPS).ln();
        }
    }
    Ok(total / rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::full(vec![1], v));
        s
    }

    #[test]
    fn stops_after_patience_and_keeps_best() {
        let mut es = EarlyStopping::new(2);
        let losses = [1.0, 0.8, 0.9, 0.85, 0.7];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            if es.observe(i + 1, l, &store(i as f32)) {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(es.best_epoch(), Some(2));
        let mut p = store(-1.0);
        es.restore_best(&mut p).unwrap();
        assert_eq!(p.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
