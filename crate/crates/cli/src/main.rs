//! `lae`: experiment recipes for regularized linear autoencoders.
//!
//! Every subcommand resolves its configuration (command defaults, then an
//! optional TOML file, then flags), writes it to `<out>/config.toml`, and
//! emits CSV artifacts next to it.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lae::training::Optimizer;
use lae::LossKind;

use crate::artifacts::{resolve_out, RunDir};
use crate::config::{Command, ExperimentConfig, Spectrum};
use crate::error::Result;

#[derive(Parser)]
#[command(name = "lae", version, about = "Regularized linear autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train one LAE; writes trace, final parameters, alignment and shrinkage tables.
    Train(Flags),
    /// Closed-form critical points with gradient norms and curvature counts.
    Landscape(Flags),
    /// Train once per lambda and collect the eigenvalue shrinkage.
    Sweep(Flags),
    /// Morse cells and mod-2 boundary check of the Grassmannian loss.
    Morse(Flags),
    /// Principal directions and eigenvalues from a trained sum-loss decoder.
    Pca(Flags),
    /// Run the numerical oracle suite.
    Verify(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    kind: Option<LossKind>,
    /// adam, gd, tied_gd or als.
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `descending`, `descending:N`, `identity`, or comma-separated singular values.
    #[arg(long)]
    spectrum: Option<Spectrum>,
    /// IDX image file or CSV with one sample per row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Use only the first N samples of --input.
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory; relative paths resolve under $LAE_OUT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Landscape: index sets to emit, 1-based, e.g. --index-sets "{1,2}" "{3}".
    #[arg(long, num_args = 1..)]
    index_sets: Option<Vec<String>>,
    /// Landscape: seeded frames per index set.
    #[arg(long)]
    frames: Option<usize>,
}

impl Flags {
    fn apply(self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { c.$field = v; })* };
        }
        set!(m, n, k, lambda, kind, optimizer, epochs, init_scale, record_every, seed, spectrum, out, index_sets, frames);
        if self.lr.is_some() {
            c.lr = self.lr;
        }
        if self.batch_size.is_some() {
            c.batch_size = self.batch_size;
        }
        if self.input.is_some() {
            c.input = self.input;
        }
        if self.samples.is_some() {
            c.samples = self.samples;
        }
    }
}

fn run(sub: Sub) -> Result<()> {
    let (command, mut flags) = match sub {
        Sub::Train(f) => (Command::Train, f),
        Sub::Landscape(f) => (Command::Landscape, f),
        Sub::Sweep(f) => (Command::Sweep, f),
        Sub::Morse(f) => (Command::Morse, f),
        Sub::Pca(f) => (Command::Pca, f),
        Sub::Verify(f) => (Command::Verify, f),
    };
    let mut config = ExperimentConfig::load(command, flags.config.take().as_deref())?;
    flags.apply(&mut config);
    config.validate(command)?;
    let run = RunDir::create(resolve_out(&config.out))?;
    commands::run(command, config, &run)?;
    println!("artifacts in {}", run.path().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
