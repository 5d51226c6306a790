use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use reno_core::models::ModelKind;
use reno_core::{Error, ErrorClass};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "reno", version, about = "Train and evaluate emotion classifiers on audio embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validate a model and write the report JSON.
    Train(TrainArgs),
    /// Score a saved checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Run the 64-bit finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic Gaussian-cluster corpus.
    SynthData(SynthArgs),
    /// Render a report JSON as a table and export confusion CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Embedding files, one per view, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Label vocabulary, one name per line. Defaults to the sorted manifest labels.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "reno")]
    model: ModelKind,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 0.4)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
    /// Also write one checkpoint per fold next to the report.
    #[arg(long)]
    save_models: bool,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Metrics JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of consecutive seeds to check, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// One or two view widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,96")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON written by `train`.
    report: PathBuf,
    /// Label vocabulary for the confusion CSV headers.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for the confusion CSVs. Defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_logging() -> Result<(), Error> {
    let level = match std::env::var("NVER_LOG_LEVEL") {
        Err(_) => LevelFilter::Info,
        Ok(v) => match v.to_ascii_lowercase().as_str() {
            "error" => LevelFilter::Error,
            "info" => LevelFilter::Info,
            "debug" => LevelFilter::Debug,
            other => {
                return Err(Error::config(format!(
                    "NVER_LOG_LEVEL must be error, info or debug, got `{other}`"
                )))
            }
        },
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .init();
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::SynthData(a) => commands::synth_data(a),
        Command::Report(a) => commands::report(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
