use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::EmbeddingDataset;

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    /// One width per view.
    pub dims: Vec<usize>,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    pub seed: u64,
}

/// One dataset per view, sharing ids and labels. Class `c` in view `v` is a
/// unit-variance Gaussian centred at `separation · u(c, v)`, where each
/// `u(c, v)` is an independent random unit vector. Rows are class-major.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<EmbeddingDataset>> {
    if cfg.dims.is_empty() || cfg.dims.len() > 2 || cfg.dims.contains(&0) {
        return Err(Error::config(format!(
            "dims must be one or two positive widths, got {:?}",
            cfg.dims
        )));
    }
    if cfg.num_classes < 2 || cfg.per_class == 0 {
        return Err(Error::config(format!(
            "need at least 2 classes and 1 sample per class, got {} x {}",
            cfg.num_classes, cfg.per_class
        )));
    }
    if !cfg.separation.is_finite() || cfg.separation < 0.0 {
        return Err(Error::config(format!(
            "separation must be a finite value >= 0, got {}",
            cfg.separation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = cfg.num_classes * cfg.per_class;
    let labels: Vec<usize> = (0..count).map(|i| i / cfg.per_class).collect();
    let label_names: Vec<String> = (0..cfg.num_classes).map(|c| format!("class{c}")).collect();
    let sample_ids: Vec<String> = (0..count).map(|i| format!("synth-{i:05}")).collect();

    let mut views = Vec::with_capacity(cfg.dims.len());
    for (v, &dim) in cfg.dims.iter().enumerate() {
        let centers: Vec<Vec<f64>> = (0..cfg.num_classes)
            .map(|_| {
                unit_vector(&mut rng, dim)
                    .into_iter()
                    .map(|u| u * cfg.separation)
                    .collect()
            })
            .collect();
        let mut data = Vec::with_capacity(count * dim);
        for &label in &labels {
            for &mu in &centers[label] {
                let z: f64 = rng.sample(StandardNormal);
                data.push((mu + z) as f32);
            }
        }
        views.push(EmbeddingDataset {
            fm_name: format!("view{v}"),
            dim,
            vectors: Tensor::new(vec![count, dim], data)?,
            sample_ids: sample_ids.clone(),
            labels: labels.clone(),
            label_names: label_names.clone(),
            speakers: None,
            corpus: vec!["synthetic".into(); count],
        });
    }
    Ok(views)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
