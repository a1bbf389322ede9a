//! File formats, experiment configuration and the `svlb` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod detfile;
pub mod error;
pub mod output;
pub mod raster;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "svlb",
    version,
    about = "Parallel-block ViT pretraining, adaptation and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by the commands that take a config file. Flags override
/// the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if missing).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scene directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Model name such as ViT-T12x1.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print parameter, FLOP and memory estimates for named models.
    Analyze {
        #[arg(required = true)]
        models: Vec<String>,
        /// Tokens per image (default: the model's native grid).
        #[arg(long)]
        tokens: Option<usize>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// MAE pretraining on the images of a scene directory.
    Pretrain(Common),
    /// Turn a pretraining checkpoint into a segmentation model.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune a segmentation model on scene masks.
    FinetuneSeg {
        #[command(flatten)]
        common: Common,
        /// Adapted or pretraining checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a segmentation checkpoint, or detection files with --dets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "dets")]
        checkpoint: Option<PathBuf>,
        /// Directory of `{id}.det.txt` files scored against `{id}.gt.txt`.
        #[arg(long, conflicts_with = "checkpoint")]
        dets: Option<PathBuf>,
    },
    /// Draw a seeded subset and report its class distribution.
    Subsample(Common),
    /// Write a directory of synthetic scenes.
    Synth(Common),
}

pub fn run(cli: Cli) -> CliResult<()> {
    use commands::*;
    match cli.command {
        Command::Analyze { models, tokens, batch } => analyze(&models, tokens, batch),
        Command::Pretrain(c) => pretrain(&c),
        Command::Adapt { common, checkpoint } => adapt(&common, &checkpoint),
        Command::FinetuneSeg { common, checkpoint } => finetune_seg(&common, &checkpoint),
        Command::Eval {
            common,
            checkpoint,
            dets,
        } => match dets {
            Some(d) => eval_detections(&common, &d),
            None => eval_segmentation(&common, checkpoint.as_deref().expect("clap enforces one of the two")),
        },
        Command::Subsample(c) => subsample(&c),
        Command::Synth(c) => synth(&c),
    }
}
