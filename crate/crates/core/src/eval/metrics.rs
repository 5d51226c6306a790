use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification scores of one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    /// F1 of every class. A class with no true and no predicted members
    /// scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        per_class_f1(&self.confusion)
    }
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::Alignment {
            what: "true labels".into(),
            left: truth.len(),
            other: "predictions".into(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Data("cannot score an empty prediction set".into()));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (row, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        let label = t.max(p);
        if label >= num_classes {
            return Err(Error::Label {
                row,
                label,
                num_classes,
            });
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    let f1 = per_class_f1(&confusion);
    Ok(Metrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        confusion,
    })
}

fn per_class_f1(confusion: &[Vec<u64>]) -> Vec<f64> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let actual: u64 = confusion[k].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect()
}

/// Confusion matrix as CSV: header holds predicted label names, the first
/// column holds true label names.
pub fn confusion_csv(confusion: &[Vec<u64>], label_names: &[String]) -> Result<String> {
    if label_names.len() != confusion.len() {
        return Err(Error::Alignment {
            what: "label names".into(),
            left: label_names.len(),
            other: "confusion rows".into(),
            right: confusion.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(label_names.iter().cloned());
    let row_err = |e: csv::Error| Error::Data(format!("confusion CSV: {e}"));
    w.write_record(&header).map_err(row_err)?;
    for (name, row) in label_names.iter().zip(confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(row_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("confusion CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8"))
}

pub fn write_confusion_csv(path: &Path, confusion: &[Vec<u64>], label_names: &[String]) -> Result<()> {
    std::fs::write(path, confusion_csv(confusion, label_names)?).map_err(|e| Error::io(path, e))
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
