use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "foodseg", version, about = "Food image segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every config-driven command.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset manifest; overrides `dataset.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Config overrides such as `segmenter.max_iters=200`.
    #[arg(value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Random,
    /// Per-dish stratified split.
    Stratified,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics and class distribution.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Also write the class distribution as SVG.
        #[arg(long)]
        plot: bool,
    },
    /// Apply a refinement plan (deletions, merges, relabel fixes).
    Refine {
        #[command(flatten)]
        common: Common,
        /// Plan file (JSON).
        #[arg(long, conflicts_with = "min_images")]
        plan: Option<PathBuf>,
        /// Build a plan deleting classes present in fewer images than this.
        #[arg(long)]
        min_images: Option<u64>,
    },
    /// Assign train/test split tags.
    Split {
        #[command(flatten)]
        common: Common,
        /// Overrides `dataset.split_mode`.
        #[arg(long, value_enum)]
        mode: Option<SplitMode>,
        /// Train fraction; overrides `dataset.split_ratio`.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Generate a synthetic dataset with paired recipes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        pretrain_images: usize,
        #[arg(long, default_value_t = 16)]
        train_images: usize,
        #[arg(long, default_value_t = 64)]
        test_images: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
    },
    /// Recipe-aligned encoder pretraining; writes an encoder archive.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train a segmenter; writes a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint, or a directory of predicted masks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "pred_dir")]
        checkpoint: Option<PathBuf>,
        /// Score existing prediction rasters named like the ground-truth masks.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
    },
    /// Side-by-side comparison of evaluated runs.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Also write a per-class IoU chart as SVG.
        #[arg(long)]
        plot: bool,
        /// Run directories holding `metrics.json`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}
