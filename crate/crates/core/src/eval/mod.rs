//! Training loop, metrics and the cross-validation protocol.

mod experiment;
mod metrics;
mod train;

pub use experiment::{
    fold_seed, fold_split, run_experiment, run_folds, ExperimentReport, FoldResult,
};
pub use metrics::{compute_metrics, confusion_csv, mean_std, write_confusion_csv, Metrics};
pub use train::{
    check_views, mean_cross_entropy, train_fold, train_fold_with, EarlyStopping, EpochStats,
    FoldSplit, TrainConfig, TrainOutcome,
};
