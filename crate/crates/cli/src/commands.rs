use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use reno_core::data::{
    load_dataset_with_labels, read_label_vocab, stratified_kfold, synth_generate,
    write_label_vocab, EmbeddingDataset, SynthConfig,
};
use reno_core::eval::{
    check_views, compute_metrics, run_folds, write_confusion_csv, ExperimentReport, TrainConfig,
};
use reno_core::gradsuite::{gradient_suite, Scope, END_TO_END_TOLERANCE, LAYER_TOLERANCE};
use reno_core::losses::LossConfig;
use reno_core::models::{BuiltModel, ModelSpec};
use reno_core::{Error, Result};
use serde_json::json;

use crate::{DataArgs, EvaluateArgs, GradcheckArgs, ReportArgs, SynthArgs, TrainArgs};

/// `dir/stem.suffix` for the stem of `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn load_views(data: &DataArgs) -> Result<Vec<EmbeddingDataset>> {
    if data.embeddings.len() > 2 {
        return Err(Error::config(format!(
            "--embeddings takes one or two files, got {}",
            data.embeddings.len()
        )));
    }
    data.embeddings
        .iter()
        .map(|e| load_dataset_with_labels(e, &data.manifest, data.labels.as_deref()))
        .collect()
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let loss = LossConfig {
        beta: a.beta,
        delta: a.delta,
        lambda: a.lambda,
    };
    let config = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        loss,
        seed: a.seed,
    };
    config.validate()?;
    if a.embeddings_count() != a.model.views() {
        return Err(Error::config(format!(
            "--model {} takes {} embedding file(s), got {}",
            a.model,
            a.model.views(),
            a.embeddings_count()
        )));
    }
    let views = load_views(&a.data)?;
    let spec = ModelSpec {
        dropout_rate: a.dropout,
        heads: a.heads,
        ..ModelSpec::new(
            a.model,
            views.iter().map(|v| v.dim).collect(),
            views[0].num_classes(),
        )
    };
    spec.validate()?;
    log::info!(
        "resolved configuration: {}",
        json!({
            "command": "train",
            "model": spec,
            "train": config,
            "k": a.k,
            "parallel_folds": a.parallel_folds,
            "save_models": a.save_models,
            "embeddings": a.data.embeddings,
            "manifest": a.data.manifest,
            "labels": a.data.labels,
            "out": a.out,
        })
    );
    log::info!(
        "{} samples, {} classes, views {:?}",
        views[0].len(),
        spec.num_classes,
        spec.input_dims
    );

    let plan = stratified_kfold(&views[0], a.k, a.seed)?;
    create_parent(&a.out)?;
    plan.write_json(&sibling(&a.out, "folds.json"))?;
    let runs = run_folds(&spec, &views, &config, &plan, a.parallel_folds)?;
    if let Some((_, m)) = runs.first() {
        log::info!("{} parameters: {}", spec.kind, m.param_count());
    }
    let mut folds = Vec::with_capacity(runs.len());
    for (result, model) in runs {
        if a.save_models {
            model.save_checkpoint(&sibling(&a.out, &format!("fold{}.ckpt", result.fold_index)))?;
        }
        folds.push(result);
    }
    let report = ExperimentReport::from_folds(spec, config, folds);
    report.write_json(&a.out)?;
    println!(
        "{}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4} -> {}",
        report.model.kind,
        report.mean_accuracy,
        report.std_accuracy,
        report.mean_macro_f1,
        report.std_macro_f1,
        a.out.display()
    );
    Ok(0)
}

impl TrainArgs {
    fn embeddings_count(&self) -> usize {
        self.data.embeddings.len()
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<u8> {
    log::info!(
        "resolved configuration: {}",
        json!({
            "command": "evaluate",
            "checkpoint": a.checkpoint,
            "embeddings": a.data.embeddings,
            "manifest": a.data.manifest,
            "labels": a.data.labels,
            "batch": a.batch,
            "out": a.out,
        })
    );
    let model = BuiltModel::load_checkpoint(&a.checkpoint)?;
    let views = load_views(&a.data)?;
    check_views(&model, &views)?;
    let inputs: Vec<_> = views.iter().map(|v| v.vectors.clone()).collect();
    let predicted = model.predict(&inputs, a.batch)?;
    let metrics = compute_metrics(&views[0].labels, &predicted, model.spec.num_classes)?;
    create_parent(&a.out)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    write_confusion_csv(
        &sibling(&a.out, "confusion.csv"),
        &metrics.confusion,
        &views[0].label_names,
    )?;
    println!(
        "accuracy {:.4}, macro-F1 {:.4} on {} samples",
        metrics.accuracy,
        metrics.macro_f1,
        predicted.len()
    );
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    log::info!(
        "resolved configuration: {}",
        json!({
            "command": "gradcheck",
            "seed": a.seed,
            "seeds": a.seeds,
            "layer_tolerance": LAYER_TOLERANCE,
            "end_to_end_tolerance": END_TO_END_TOLERANCE,
        })
    );
    let mut failed = Vec::new();
    println!("{:<6} {:<28} {:<11} {:>12} {:>10}  status", "seed", "case", "scope", "max rel err", "tolerance");
    for seed in a.seed..a.seed.saturating_add(a.seeds.max(1)) {
        for case in gradient_suite(seed)? {
            let scope = match case.scope {
                Scope::Layer => "layer",
                Scope::EndToEnd => "end-to-end",
            };
            println!(
                "{seed:<6} {:<28} {scope:<11} {:>12.3e} {:>10.0e}  {}",
                case.name,
                case.report.max_rel_error(),
                case.report.tolerance,
                if case.passed() { "ok" } else { "FAIL" }
            );
            if !case.passed() {
                failed.push((seed, case));
            }
        }
    }
    if failed.is_empty() {
        return Ok(0);
    }
    println!("\nfailing parameters:");
    for (seed, case) in failed {
        for p in case.report.params.iter().filter(|p| !p.passed) {
            println!(
                "{seed:<6} {:<28} {:<24} {:>12.3e} ({} coords)",
                case.name, p.name, p.max_rel_error, p.coords_checked
            );
        }
    }
    Ok(3)
}

pub fn synth_data(a: SynthArgs) -> Result<u8> {
    let cfg = SynthConfig {
        num_classes: a.classes,
        per_class: a.per_class,
        dims: a.dims,
        separation: a.separation,
        seed: a.seed,
    };
    log::info!(
        "resolved configuration: {}",
        json!({ "command": "synth-data", "synth": cfg, "out": a.out })
    );
    let views = synth_generate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let manifest = a.out.join("manifest.csv");
    let labels = a.out.join("labels.txt");
    for (i, view) in views.iter().enumerate() {
        let emb = a.out.join(format!("view{i}.nveb"));
        view.save(&emb, &manifest, None)?;
        println!("wrote {} ({} x {})", emb.display(), view.len(), view.dim);
    }
    write_label_vocab(&labels, &views[0].label_names)?;
    println!("wrote {} and {}", manifest.display(), labels.display());
    Ok(0)
}

/// Aligned per-fold accuracy and macro-F1 table, in percent.
pub fn render_table(report: &ExperimentReport) -> String {
    let name = report.model.kind.to_string();
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>5} {:>8} {:>8}", "model", "fold", "A", "F1");
    for f in &report.folds {
        let _ = writeln!(
            out,
            "{name:<8} {:>5} {:>8.2} {:>8.2}",
            f.fold_index,
            100.0 * f.accuracy,
            100.0 * f.macro_f1
        );
    }
    let _ = writeln!(
        out,
        "{name:<8} {:>5} {:>8.2} {:>8.2}",
        "mean",
        100.0 * report.mean_accuracy,
        100.0 * report.mean_macro_f1
    );
    let _ = writeln!(
        out,
        "{name:<8} {:>5} {:>8.2} {:>8.2}",
        "std",
        100.0 * report.std_accuracy,
        100.0 * report.std_macro_f1
    );
    out
}

pub fn report(a: ReportArgs) -> Result<u8> {
    let report = ExperimentReport::read_json(&a.report)?;
    let c = report.model.num_classes;
    let names = match &a.labels {
        Some(p) => read_label_vocab(p)?,
        None => (0..c).map(|i| i.to_string()).collect(),
    };
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a
            .report
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    log::info!(
        "resolved configuration: {}",
        json!({ "command": "report", "report": a.report, "labels": a.labels, "out": dir })
    );
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    print!("{}", render_table(&report));
    let base = dir.join(a.report.file_name().unwrap_or_else(|| "report".as_ref()));
    let mut total = vec![vec![0u64; c]; c];
    for f in &report.folds {
        write_confusion_csv(
            &sibling(&base, &format!("fold{}.confusion.csv", f.fold_index)),
            &f.confusion,
            &names,
        )?;
        for (t, row) in total.iter_mut().zip(&f.confusion) {
            for (x, y) in t.iter_mut().zip(row) {
                *x += y;
            }
        }
    }
    let summed = sibling(&base, "confusion.csv");
    write_confusion_csv(&summed, &total, &names)?;
    log::info!("wrote confusion matrices to {}", dir.display());
    Ok(0)
}
