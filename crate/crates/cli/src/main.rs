//! `cifst`: generate toy corpora, train, decode offline, simulate streaming
//! policies and score decision logs.

mod config;
mod corpus;
mod evaluate;
mod train;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cifst",
    version,
    about = "Unified streaming and offline speech translation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Asr,
    St,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Prefix,
    Adaptive,
    Offline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    /// Iterate strides at fixed k.
    Stride,
    /// Iterate k at fixed stride.
    K,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (train/dev/test manifests).
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        /// Store frames inside the manifests instead of side files.
        #[arg(long)]
        inline: bool,
    },
    /// Train a model on a corpus directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Decode a split offline.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum, default_value = "st")]
        task: TaskArg,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a streaming policy over a split and score it.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Lagging; `inf` waits for the whole source.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        stride_ms: Option<u64>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, value_enum)]
        sweep: Option<SweepArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score existing decision logs.
    Score {
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        /// Manifest whose translations replace the references stored in the logs.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "st")]
        task: TaskArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the joint-loss gradient on a tiny model.
    GradCheck {
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateData {
            out,
            config,
            seed,
            n_train,
            n_test,
            inline,
        } => corpus::generate(&out, config.as_deref(), seed, n_train, n_test, inline),
        Command::Train {
            data,
            out,
            config,
            seed,
            epochs,
            max_steps,
        } => train::train(&data, &out, config.as_deref(), seed, epochs, max_steps),
        Command::Translate {
            checkpoint,
            data,
            split,
            task,
            beam,
            out,
            config,
        } => evaluate::translate(
            &checkpoint,
            &data,
            &split,
            task,
            beam,
            &out,
            config.as_deref(),
        ),
        Command::Simulate {
            checkpoint,
            data,
            split,
            policy,
            k,
            stride_ms,
            task,
            sweep,
            out,
            config,
        } => {
            let args = evaluate::SimulateArgs {
                policy,
                k,
                stride_ms,
                task,
                sweep,
            };
            evaluate::simulate(&checkpoint, &data, &split, args, &out, config.as_deref())
        }
        Command::Score {
            logs,
            references,
            task,
            out,
        } => evaluate::score(&logs, references.as_deref(), task, out.as_deref()),
        Command::GradCheck {
            seed,
            step,
            tolerance,
        } => train::grad_check(seed, step, tolerance),
    }
}
