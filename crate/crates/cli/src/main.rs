//! scalq: compress a network into a truncatable stream, pick per-layer bit
//! depths under a budget, fine-tune centroids, and ship incremental upgrades.
//!
//! Exit codes: 0 success, 2 config/usage, 3 I/O, 4 file validation,
//! 5 infeasible budget/search, 6 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scalq::error::ErrorClass;
use scalq::{Error, Result};

use commands::{AllocateOptions, FinetuneOptions, GenToyOptions, GenToyPaths};
use config::{require, require_path, resolve, resolve_path, Settings};

#[derive(Parser)]
#[command(
    name = "scalq",
    version,
    about = "Scalable neural-network weight compression",
    after_help = "Options may also come from a flat `key = value` config file \
                  (--config); command-line flags win. Budgets take b/KB/MB \
                  suffixes with 1 KB = 1024 bytes."
)]
struct Cli {
    /// Config file providing defaults for any option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap the worker-thread count (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hierarchically quantize a model into a scalable stream.
    Quantize(QuantizeArgs),
    /// Search for a bit allocation under a budget and truncate the stream to it.
    Allocate(AllocateArgs),
    /// Cut a stream to a smaller per-layer allocation.
    Truncate(TruncateArgs),
    /// Compute the incremental upgrade from one stream to another.
    Delta(DeltaArgs),
    /// Apply an upgrade delta to its base stream.
    ApplyDelta(ApplyDeltaArgs),
    /// Fine-tune stream centroids on a training set.
    Finetune(FinetuneArgs),
    /// Evaluate a compressed model: loss, accuracy, sizes.
    Eval(EvalArgs),
    /// Dump headers of a model, stream, or delta file.
    Info(InfoArgs),
    /// Generate a deterministic pre-trained toy model and IDX datasets.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Initial bits per CONV layer (M).
    #[arg(long)]
    conv_bits: Option<u16>,
    /// Initial bits per FC layer (P).
    #[arg(long)]
    fc_bits: Option<u16>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Bit budget with unit suffix, e.g. 200KB.
    #[arg(long)]
    budget: Option<String>,
    /// greedy, grid, or random.
    #[arg(long)]
    strategy: Option<String>,
    /// Validation subset size (first samples of the dataset, fixed order).
    #[arg(long)]
    val_count: Option<usize>,
    /// Configurations for the random strategy.
    #[arg(long)]
    random_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse grid searches above this many configurations.
    #[arg(long)]
    grid_cap: Option<u128>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Search-trace CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Target allocation, e.g. 6-6-4-3 or 6,6,4,3.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeltaArgs {
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ApplyDeltaArgs {
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    delta: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    val_images: Option<PathBuf>,
    #[arg(long)]
    val_labels: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-trajectory CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    /// Model, stream, or delta file (detected by magic bytes).
    file: Option<PathBuf>,
}

#[derive(Args)]
struct GenToyArgs {
    /// lenet (2 CONV + 2 FC) or mlp (FC only).
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    val_samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_model: Option<PathBuf>,
    #[arg(long)]
    out_images: Option<PathBuf>,
    #[arg(long)]
    out_labels: Option<PathBuf>,
    #[arg(long)]
    out_val_images: Option<PathBuf>,
    #[arg(long)]
    out_val_labels: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(threads) = resolve(cli.threads, &settings, "threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Quantize(a) => commands::cmd_quantize(
            &require_path(a.model, &settings, "model")?,
            resolve(a.conv_bits, &settings, "conv-bits")?.unwrap_or(8),
            resolve(a.fc_bits, &settings, "fc-bits")?.unwrap_or(5),
            &require_path(a.out, &settings, "out")?,
        ),
        Command::Allocate(a) => {
            let opts = AllocateOptions {
                strategy: resolve(a.strategy, &settings, "strategy")?
                    .unwrap_or_else(|| "greedy".to_string()),
                budget: require(a.budget, &settings, "budget")?,
                val_count: resolve(a.val_count, &settings, "val-count")?.unwrap_or(512),
                random_count: resolve(a.random_count, &settings, "random-count")?.unwrap_or(120),
                seed: resolve(a.seed, &settings, "seed")?.unwrap_or(0),
                grid_cap: resolve(a.grid_cap, &settings, "grid-cap")?.unwrap_or(1_000_000),
            };
            commands::cmd_allocate(
                &require_path(a.model, &settings, "model")?,
                &require_path(a.stream, &settings, "stream")?,
                &require_path(a.images, &settings, "images")?,
                &require_path(a.labels, &settings, "labels")?,
                &opts,
                &require_path(a.out, &settings, "out")?,
                &require_path(a.csv, &settings, "csv")?,
            )
        }
        Command::Truncate(a) => commands::cmd_truncate(
            &require_path(a.stream, &settings, "stream")?,
            &require::<String>(a.bits, &settings, "bits")?,
            &require_path(a.out, &settings, "out")?,
        ),
        Command::Delta(a) => commands::cmd_delta(
            &require_path(a.base, &settings, "base")?,
            &require_path(a.target, &settings, "target")?,
            &require_path(a.out, &settings, "out")?,
        ),
        Command::ApplyDelta(a) => commands::cmd_apply_delta(
            &require_path(a.stream, &settings, "stream")?,
            &require_path(a.delta, &settings, "delta")?,
            &require_path(a.out, &settings, "out")?,
        ),
        Command::Finetune(a) => {
            let opts = FinetuneOptions {
                learning_rate: resolve(a.lr, &settings, "ft-lr")?.unwrap_or(0.002),
                epochs: resolve(a.epochs, &settings, "ft-epochs")?.unwrap_or(10),
                batch_size: resolve(a.batch, &settings, "ft-batch")?.unwrap_or(32),
                seed: resolve(a.seed, &settings, "ft-seed")?.unwrap_or(0),
            };
            let val_images = resolve_path(a.val_images, &settings, "val-images")?;
            let val_labels = resolve_path(a.val_labels, &settings, "val-labels")?;
            commands::cmd_finetune(
                &require_path(a.model, &settings, "model")?,
                &require_path(a.stream, &settings, "stream")?,
                &require_path(a.images, &settings, "images")?,
                &require_path(a.labels, &settings, "labels")?,
                val_images.as_deref(),
                val_labels.as_deref(),
                &opts,
                &require_path(a.out, &settings, "out")?,
                &require_path(a.csv, &settings, "csv")?,
            )
        }
        Command::Eval(a) => commands::cmd_eval(
            &require_path(a.model, &settings, "model")?,
            &require_path(a.stream, &settings, "stream")?,
            &require_path(a.images, &settings, "images")?,
            &require_path(a.labels, &settings, "labels")?,
        ),
        Command::Info(a) => commands::cmd_info(&require_path(a.file, &settings, "file")?),
        Command::GenToy(a) => {
            let opts = GenToyOptions {
                arch: resolve(a.arch, &settings, "arch")?.unwrap_or_else(|| "lenet".to_string()),
                classes: resolve(a.classes, &settings, "classes")?.unwrap_or(4),
                rows: resolve(a.rows, &settings, "rows")?.unwrap_or(8),
                cols: resolve(a.cols, &settings, "cols")?.unwrap_or(8),
                train_samples: resolve(a.train_samples, &settings, "train-samples")?
                    .unwrap_or(256),
                val_samples: resolve(a.val_samples, &settings, "val-samples")?.unwrap_or(64),
                epochs: resolve(a.epochs, &settings, "epochs")?.unwrap_or(30),
                learning_rate: resolve(a.lr, &settings, "lr")?.unwrap_or(0.1),
                seed: resolve(a.seed, &settings, "seed")?.unwrap_or(1),
            };
            let paths = GenToyPaths {
                model: require_path(a.out_model, &settings, "out-model")?,
                images: require_path(a.out_images, &settings, "out-images")?,
                labels: require_path(a.out_labels, &settings, "out-labels")?,
                val_images: require_path(a.out_val_images, &settings, "out-val-images")?,
                val_labels: require_path(a.out_val_labels, &settings, "out-val-labels")?,
            };
            commands::cmd_gen_toy(&opts, &paths)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.class() {
                ErrorClass::Config => 2,
                ErrorClass::Io => 3,
                ErrorClass::Validation => 4,
                ErrorClass::Infeasible => 5,
                ErrorClass::Numeric => 6,
            };
            ExitCode::from(code)
        }
    }
}
