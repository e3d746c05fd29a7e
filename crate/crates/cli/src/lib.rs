//! Command-line front end: config resolution, training with validation-based
//! checkpoint selection, evaluation, diagnostics and corpus generation.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_pairs, synth_from_text, ConfigError, RunConfig};
pub use error::{CliError, ExitClass};

#[derive(Debug, Parser)]
#[command(name = "sclfish", version, about = "Domain-generalization trainers for abusive-language classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, keep the best-validation and final checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Re-run exactly the run recorded in this manifest.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Score a checkpoint on the platforms holding one role.
    Eval(RunArgs),
    /// Gradient diagnostics.
    Diagnose {
        #[command(subcommand)]
        which: Diagnose,
    },
    /// Write a synthetic multi-platform corpus as JSONL.
    Synth(SynthArgs),
    /// Write per-example embeddings as CSV.
    ExportEmbeddings(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    /// Full-batch gradient inner products between training platforms.
    Gip(RunArgs),
    /// Cosine between the Fish update and the exact alignment gradient on a toy problem.
    Cosine {
        #[command(flatten)]
        run: RunArgs,
        /// Built-in toy: twin-quadratic, quadratic or logistic.
        #[arg(long)]
        toy: Option<String>,
        /// Comma-separated inner step sizes.
        #[arg(long)]
        alphas: Option<String>,
    },
}

/// Flags shared by every run command; each maps onto one config key.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub data: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
    #[arg(long, value_name = "P1,P2,..")]
    pub train_platforms: Option<String>,
    #[arg(long, value_name = "PLATFORM")]
    pub val_platform: Option<String>,
    #[arg(long, value_name = "P1,P2,..")]
    pub test_platforms: Option<String>,
    /// Downsample each platform's majority class; an optional value sets the seed.
    #[arg(long, value_name = "SEED", num_args = 0..=1)]
    pub balanced: Option<Option<String>>,
    /// full or balanced.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<String>,
    /// train, validation, test or all.
    #[arg(long)]
    pub role: Option<String>,
    /// Any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    /// `(key, value)` pairs of the dedicated flags, in a fixed order.
    pub fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("seed", &self.seed);
        push("algorithm", &self.algorithm);
        push("data", &self.data);
        push("out", &self.out);
        push("train_platforms", &self.train_platforms);
        push("val_platform", &self.val_platform);
        push("test_platforms", &self.test_platforms);
        push("eval_mode", &self.mode);
        push("checkpoint", &self.checkpoint);
        push("eval_role", &self.role);
        if let Some(seed) = &self.balanced {
            out.push(("eval_mode", "balanced".into()));
            if let Some(s) = seed {
                out.push(("balanced_seed", s.clone()));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.config.is_none() && self.flag_pairs().is_empty() && self.overrides.is_empty()
    }
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Runs one command, writing its primary output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train { run, manifest } => commands::train(&run, manifest.as_deref(), stdout),
        Command::Eval(run) => commands::eval(&run, stdout),
        Command::Diagnose { which } => match which {
            Diagnose::Gip(run) => commands::diagnose_gip(&run, stdout),
            Diagnose::Cosine { run, toy, alphas } => {
                commands::diagnose_cosine(&run, toy.as_deref(), alphas.as_deref(), stdout)
            }
        },
        Command::Synth(args) => commands::synth(&args, stdout),
        Command::ExportEmbeddings(run) => commands::export(&run, stdout),
    }
}
