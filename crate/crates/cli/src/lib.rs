//! The `alesal` command line.
//!
//! Settings are resolved in three layers: built-in defaults, then the TOML
//! file given by `--config`, then command-line flags. A flag always wins.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
pub mod data;

pub use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "alesal", version, about = "Wi-Fi CSI sleep apnea and limb movement detection")]
pub struct Cli {
    /// Seed for every random choice (data generation, initialisation, shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with `seed`, `threads` and `[dataset]`, `[preprocess]`,
    /// `[model]`, `[train]` tables. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled synthetic CSI sessions.
    Synth(SynthArgs),
    /// Turn a session directory into a feature blob.
    Preprocess(PreprocessCmd),
    /// Train a classifier and write a checkpoint.
    Train(TrainCmd),
    /// Evaluate a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Predict classes for every window.
    Infer(InferArgs),
    /// Train attention ablations (and optionally the baseline) over several seeds.
    Ablate(AblateCmd),
    /// Dump time-attention matrices and pair-attention weights as CSV.
    InspectAttention(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Sessions per class (one 20 s window each by default).
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub duration_sec: Option<f64>,
    /// Sampling rate of the rendered CSI in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub subcarriers: Option<usize>,
    /// Force one weak pair in every session, as `PAIR:FACTOR` (e.g. `2:0.1`).
    #[arg(long, value_parser = parse_weak_pair)]
    pub weak_pair: Option<(usize, f64)>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Preprocessing overrides; unset values keep their defaults.
#[derive(Debug, Default, Args)]
pub struct PreprocessArgs {
    /// Uniform resampling rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Window length in seconds.
    #[arg(long)]
    pub window_sec: Option<f64>,
    /// Band-pass corner frequencies as `MIN:MAX` in Hz.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    #[arg(long)]
    pub filter_order: Option<usize>,
    #[arg(long)]
    pub stft_window_sec: Option<f64>,
    #[arg(long)]
    pub stft_hop_sec: Option<f64>,
    #[arg(long, value_enum)]
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Normalization {
    PerInstant,
    PerWindow,
}

#[derive(Debug, Args)]
pub struct PreprocessCmd {
    /// Session directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub me_channels: Option<usize>,
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub eca_gamma: Option<f64>,
    #[arg(long)]
    pub eca_b: Option<f64>,
    /// One GRU for all pairs instead of one per pair.
    #[arg(long)]
    pub shared_gru: bool,
    /// Disable time attention.
    #[arg(long)]
    pub no_ta: bool,
    /// Disable antenna-pair attention.
    #[arg(long)]
    pub no_pa: bool,
    #[arg(long, conflicts_with = "spectrum_only")]
    pub amplitude_only: bool,
    #[arg(long)]
    pub spectrum_only: bool,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Arch {
    #[default]
    Alesal,
    Dmlp,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Session directory or feature blob.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Arch::Alesal)]
    pub arch: Arch,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled session directory or feature blob.
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless accuracy (percent) reaches this value.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    /// Fail unless weighted F1 (0-100) reaches this value.
    #[arg(long)]
    pub min_f1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Session directory (label files optional) or feature blob.
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    /// Training data: session directory or feature blob.
    #[arg(long)]
    pub train_data: PathBuf,
    /// Test data: session directory or feature blob.
    #[arg(long)]
    pub test_data: PathBuf,
    /// Number of seeds, counted up from `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Comma-separated variants: full, ta-only, pa-only, none,
    /// amplitude-only, spectrum-only, dmlp.
    #[arg(long, value_delimiter = ',', default_values_t = ["full".to_string(), "ta-only".into(), "pa-only".into(), "none".into()])]
    pub variants: Vec<String>,
    /// Per-run results CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Session directory or feature blob. Without it, a small synthetic set
    /// (two sessions per class) is generated from `--seed`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Only this window id.
    #[arg(long)]
    pub window: Option<u32>,
    /// Directory for `time_attention.csv` and `pair_attention.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_weak_pair(s: &str) -> Result<(usize, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected PAIR:FACTOR")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 on a usage error, 1 on any other failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref(), cli.seed, cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = settings.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("creating the worker pool")?;
    pool.install(|| commands::dispatch(cli.command, settings))
}
