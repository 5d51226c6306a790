use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::EmbeddingDataset;

/// Fraction of each training portion held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Test-fold index of every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f == fold)
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f != fold)
    }

    fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| keep(f))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

pub fn stratified_kfold(dataset: &EmbeddingDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    kfold(&dataset.labels, dataset.num_classes(), k, seed, |c| {
        dataset.label_names[c].clone()
    })
}

/// Shuffles each class with a seeded stream, then deals its members to folds
/// round-robin. The dealing position carries over from one class to the
/// next so that fold sizes stay balanced overall.
pub fn stratified_kfold_labels(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    kfold(labels, num_classes, k, seed, |c| c.to_string())
}

fn kfold(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
    class_name: impl Fn(usize) -> String,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    let members = class_members(labels, num_classes, 0..labels.len())?;
    if let Some((class, m)) = members.iter().enumerate().find(|(_, m)| m.len() < k) {
        return Err(Error::Stratification {
            class: class_name(class),
            count: m.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for mut m in members {
        m.shuffle(&mut rng);
        for i in m {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        seed,
        k,
        assignments,
    })
}

fn class_members(
    labels: &[usize],
    num_classes: usize,
    rows: impl IntoIterator<Item = usize>,
) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); num_classes];
    for row in rows {
        let label = labels[row];
        members
            .get_mut(label)
            .ok_or(Error::Label {
                row,
                label,
                num_classes,
            })?
            .push(row);
    }
    Ok(members)
}

/// Splits `rows` into (train, validation). Each class with at least two
/// members gives up `round(0.1·n)` of them, at least one, and keeps at least
/// one. Both outputs are sorted.
pub fn validation_split(
    labels: &[usize],
    num_classes: usize,
    rows: &[usize],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(rows.len());
    let mut val = Vec::new();
    for mut m in class_members(labels, num_classes, rows.iter().copied())? {
        m.shuffle(&mut rng);
        let n = m.len();
        let take = if n < 2 {
            0
        } else {
            ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1)
        };
        val.extend_from_slice(&m[..take]);
        train.extend_from_slice(&m[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Consecutive chunks of `rows`; the last chunk may be short.
pub fn batches(rows: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    rows.chunks(batch_size.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_class_fold_counts(labels: &[usize], c: usize, plan: &FoldPlan) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; plan.k]; c];
        for (i, &f) in plan.assignments.iter().enumerate() {
            counts[labels[i]][f] += 1;
        }
        counts
    }

    #[test]
    fn balanced_classes_divide_evenly() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let plan = stratified_kfold_labels(&labels, 2, 5, 3).unwrap();
        for row in per_class_fold_counts(&labels, 2, &plan) {
            assert_eq!(row, vec![10; 5]);
        }
    }

    #[test]
    fn uneven_class_within_one() {
        let labels: Vec<usize> = (0..103).map(|i| usize::from(i >= 53)).collect();
        let plan = stratified_kfold_labels(&labels, 2, 5, 11).unwrap();
        let counts = per_class_fold_counts(&labels, 2, &plan);
        assert!(counts[0].iter().all(|&n| n == 10 || n == 11), "{counts:?}");
        assert_eq!(counts[0].iter().sum::<usize>(), 53);
    }

    #[test]
    fn same_seed_same_plan() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = stratified_kfold_labels(&labels, 3, 5, 9).unwrap();
        assert_eq!(a, stratified_kfold_labels(&labels, 3, 5, 9).unwrap());
        assert_ne!(a, stratified_kfold_labels(&labels, 3, 5, 10).unwrap());
    }

    #[test]
    fn small_class_names_itself() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1];
        match stratified_kfold_labels(&labels, 2, 5, 0) {
            Err(Error::Stratification { class, count: 4, k: 5 }) if class == "1" => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_export_fields() {
        let plan = FoldPlan {
            seed: 4,
            k: 2,
            assignments: vec![0, 1, 1],
        };
        assert_eq!(plan.to_json().unwrap(), r#"{"seed":4,"k":2,"assignments":[0,1,1]}"#);
        assert_eq!(plan.test_indices(1), vec![1, 2]);
        assert_eq!(plan.train_indices(1), vec![0]);
    }

    #[test]
    fn validation_holdout_is_stratified() {
        let labels: Vec<usize> = (0..240).map(|i| i % 6).collect();
        let rows: Vec<usize> = (0..240).filter(|i| i % 5 != 0).collect();
        let (train, val) = validation_split(&labels, 6, &rows, 1).unwrap();
        assert_eq!(train.len() + val.len(), rows.len());
        let mut per_class = [0; 6];
        for &v in &val {
            per_class[labels[v]] += 1;
            assert!(train.binary_search(&v).is_err());
        }
        assert_eq!(per_class, [3; 6]);
    }

    #[test]
    fn holdout_keeps_training_examples() {
        let labels = vec![0, 1, 1];
        let (train, val) = validation_split(&labels, 2, &[0, 1, 2], 0).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(val.len(), 1);
        assert!(train.contains(&0));
    }

    #[test]
    fn last_batch_kept() {
        let rows: Vec<usize> = (0..70).collect();
        let sizes: Vec<usize> = batches(&rows, 32).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![32, 32, 6]);
    }
}
