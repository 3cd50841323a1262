//! `gestrec`: command-line front end for the streaming gesture recognition
//! engine. Ingestion, training, threshold learning, offline/online
//! evaluation, live stream labeling, and the continual-vs-batch benchmark.

mod commands;
mod config;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "gestrec", version, about = "Streaming 3D hand-gesture recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    /// KV-cached continual encoder, one frame per step.
    Continual,
    /// Re-classify the trailing window through the batch path.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    /// 6 encoder layers, d_model 128 (paper-scale sizes).
    Full,
    /// 2 encoder layers, d_model 32 (desk-scale training).
    Compact,
}

#[derive(Debug, Args)]
pub struct CommonOpts {
    /// JSON run-configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic gesture dataset.
    GenSynthetic {
        #[command(flatten)]
        common: CommonOpts,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_streams: Option<usize>,
        #[arg(long)]
        val_streams: Option<usize>,
        #[arg(long)]
        test_streams: Option<usize>,
        /// Coordinate jitter sigma.
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Convert a raw SHREC'21 release directory into the canonical format.
    ImportShrec21 {
        #[command(flatten)]
        common: CommonOpts,
        /// Raw release directory (training_set/ and test_set/).
        #[arg(long)]
        raw: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset directory (contains manifest.json).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-history JSON output (default: <out>.history.json).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<ModelPreset>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Window length γ for training samples (and the default online W).
        #[arg(long)]
        window: Option<usize>,
        /// Store checkpoint tensors as f32 instead of f64.
        #[arg(long)]
        f32: bool,
    },
    /// Learn per-class probability thresholds on the validation split.
    LearnThresholds {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        default_threshold: Option<f64>,
    },
    /// Accuracy over held-out gesture segments (batch path).
    EvalOffline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label a frame stream (file or '-' for standard input).
    Stream {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Canonical sequence file, or '-' to read frames from stdin
        /// (one frame per line: lambda*3 space-separated reals).
        #[arg(long, default_value = "-")]
        input: String,
        #[arg(long, value_enum)]
        engine: Option<EngineKind>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        /// Skip stream normalization (input is already normalized).
        #[arg(long)]
        no_normalize: bool,
        /// Write labels + events as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Online recognition over the test split plus detection metrics.
    EvalOnline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long, value_enum)]
        engine: Option<EngineKind>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step cost of continual vs full-window batch recomputation.
    Bench {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated memory sizes to benchmark.
        #[arg(long, default_value = "16,64,128", value_delimiter = ',')]
        windows: Vec<usize>,
        /// Timed continual steps per window size.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynthetic { common, out, train_streams, val_streams, test_streams, jitter } => {
            commands::gen_synthetic(common, out, train_streams, val_streams, test_streams, jitter)
        }
        Command::ImportShrec21 { common, raw, out } => commands::import_shrec21(common, raw, out),
        Command::Train { common, data, out, history, model, max_epochs, batch_size, window, f32 } => {
            commands::train(common, data, out, history, model, max_epochs, batch_size, window, f32)
        }
        Command::LearnThresholds { common, data, checkpoint, out, default_threshold } => {
            commands::learn_thresholds(common, data, checkpoint, out, default_threshold)
        }
        Command::EvalOffline { common, data, checkpoint, out } => {
            commands::eval_offline(common, data, checkpoint, out)
        }
        Command::Stream { common, checkpoint, thresholds, input, engine, window, stride, no_normalize, out } => {
            commands::stream(common, checkpoint, thresholds, input, engine, window, stride, no_normalize, out)
        }
        Command::EvalOnline { common, data, checkpoint, thresholds, engine, window, stride, out } => {
            commands::eval_online(common, data, checkpoint, thresholds, engine, window, stride, out)
        }
        Command::Bench { common, windows, reps, out } => commands::bench(common, windows, reps, out),
    }
}
