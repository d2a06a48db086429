//! Command-line front end: synthetic data, training, evaluation, geometry
//! verification, the sparsity sweep and feature export.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use parsnets::{Error, ErrorKind};

pub use config::{Overrides, Settings};

#[derive(Parser, Debug)]
#[command(name = "parsnets", version, about = "Zero-shot learning with sparse compositions of linear networks")]
pub struct Cli {
    /// `key = value` settings file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Only print errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    GenSynth,
    /// Train the encoder and then the model (joint or dual path).
    Train,
    /// Evaluate a checkpoint (ZSL accuracy, GZSL U/S/H).
    Eval,
    /// Concatenation inequalities, global-minimum certification, kernel PSD check.
    Verify,
    /// Train and evaluate across a list of k values.
    SweepK,
    /// Write mapped semantic features of one split.
    ExportFeatures,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
    }
}

pub fn run(cli: &Cli) -> parsnets::Result<()> {
    let settings = Settings::resolve(cli.config.as_deref(), &cli.overrides)?;
    let ctx = commands::Context::new(settings, cli.quiet)?;
    match cli.command {
        Command::GenSynth => commands::gen_synth(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::SweepK => commands::sweep_k(&ctx),
        Command::ExportFeatures => commands::export_features(&ctx),
    }
}
