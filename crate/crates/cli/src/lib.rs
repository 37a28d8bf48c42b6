//! `foodseg` command-line harness: dataset tooling, recipe pretraining,
//! segmenter training, evaluation and comparison reports. Every command
//! writes its outputs plus a `run-manifest.json` under its output directory.

pub mod args;
pub mod commands;
pub mod config;
pub mod failure;
pub mod provenance;

use args::{Cli, Command};
use failure::CmdResult;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Stats { common, plot } => commands::stats(&common, plot),
        Command::Refine {
            common,
            plan,
            min_images,
        } => commands::refine(&common, plan.as_deref(), min_images),
        Command::Split { common, mode, ratio } => commands::split(&common, mode, ratio),
        Command::Synth {
            out,
            seed,
            pretrain_images,
            train_images,
            test_images,
            image_size,
        } => commands::synth(
            &out,
            &commands::SynthOptions {
                seed,
                pretrain_images,
                train_images,
                test_images,
                image_size,
            },
        ),
        Command::Pretrain { common } => commands::pretrain(&common),
        Command::Train { common } => commands::train(&common),
        Command::Eval {
            common,
            checkpoint,
            pred_dir,
        } => commands::eval(&common, checkpoint.as_deref(), pred_dir.as_deref()),
        Command::Report { out, plot, runs } => commands::report(&out, plot, &runs),
    }
}
