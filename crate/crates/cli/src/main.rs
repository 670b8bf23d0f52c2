//! `nmm`: build vocabularies, train, evaluate and interpolate neural mixture
//! language models.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors (reported
//! before any work starts), 2 for failures while running.

mod commands;
mod config;
mod fixture;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A problem with the command line or configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "nmm", version, about = "Neural mixture language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from training text and report unknown-token rates.
    Vocab(VocabArgs),
    /// Train a model; writes logs, checkpoints and a report to the output directory.
    Train(Box<TrainArgs>),
    /// Perplexity of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Perplexity of a linear interpolation of checkpoints.
    Interp(InterpArgs),
    /// Parameter count of a model layout.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Use the embedded toy corpus.
    #[arg(long)]
    pub toy_fixture: bool,
    /// Number of retained words, excluding <unk> and <eos>.
    #[arg(long, default_value_t = 10_000)]
    pub vocab_cap: usize,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Hyperparameter preset: ptb or ltcb.
    #[arg(long, default_value = "ptb")]
    pub preset: String,
    /// Flat `key = value` file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub toy_fixture: bool,
    #[arg(long)]
    pub vocab_cap: Option<usize>,
    /// Mixture spec, e.g. `R100+F200^2-4`.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub emb: Option<usize>,
    /// Mixture layer width; 0 for a standalone model.
    #[arg(long)]
    pub mix: Option<usize>,
    #[arg(long)]
    pub fnn_depth: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Model dropout probability.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub bptt: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub min_improvement: Option<f64>,
    /// Elementwise gradient clip; 0 disables.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    /// Do not score sentence-boundary targets during validation.
    #[arg(long)]
    pub exclude_eos: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub exclude_eos: bool,
    /// Row label in the output.
    #[arg(long)]
    pub name: Option<String>,
    /// Baseline parameter count for the growth column.
    #[arg(long)]
    pub baseline_nop: Option<u64>,
    /// Also write the CSV row to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InterpArgs {
    /// Two or more checkpoints sharing one vocabulary.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated weights summing to 1; uniform when omitted.
    #[arg(long, value_delimiter = ',', conflicts_with = "valid")]
    pub weights: Option<Vec<f64>>,
    /// Held-out text used to grid-search the weights.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    #[arg(long)]
    pub exclude_eos: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 100)]
    pub emb: usize,
    /// Mixture layer width; 0 for a standalone model.
    #[arg(long, default_value_t = 400)]
    pub mix: usize,
    #[arg(long, default_value_t = 10_000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1)]
    pub fnn_depth: usize,
    #[arg(long)]
    pub no_biases: bool,
    /// Baseline layout for the growth column.
    #[arg(long)]
    pub baseline_spec: Option<String>,
    /// Baseline embedding size; defaults to `--emb`.
    #[arg(long)]
    pub baseline_emb: Option<usize>,
    /// Baseline mixture width; 0 (standalone) by default.
    #[arg(long, default_value_t = 0)]
    pub baseline_mix: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Vocab(a) => commands::vocab(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Interp(a) => commands::interp(&a),
        Command::Params(a) => commands::params(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
