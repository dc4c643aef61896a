mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use omics_ssl::evaluation::Drop;
use omics_ssl::model::Aggregation;
use omics_ssl::training::Arm;

/// Self-supervised multi-omics pre-training and semi-supervised evaluation.
///
/// Exit status: 0 on success, 1 when a run fails, 2 on usage errors
/// (bad flags, missing input files, a non-empty output directory without --force).
/// SELF_OMICS_THREADS caps the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "omics-ssl", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct OutArgs {
    /// Output directory; falls back to `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Feature count per view, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "50,40,20")]
        dims: Vec<usize>,
        /// Shared latent dimension.
        #[arg(long, default_value_t = 8)]
        latent: usize,
        /// Standard deviation of the per-view Gaussian noise.
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Pre-train the encoders on the pretext tasks and save a checkpoint.
    Pretrain {
        /// Run config (JSON); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.pretext_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a classifier on top of a checkpoint and score the test split.
    Finetune {
        /// Run config; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `train.label_fraction`.
        #[arg(long)]
        label_fraction: Option<f64>,
        /// Keep encoders frozen (the default unless the config says otherwise).
        #[arg(long, overrides_with = "no_freeze")]
        freeze: bool,
        /// Update encoders together with the classifier.
        #[arg(long, overrides_with = "freeze")]
        no_freeze: bool,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.downstream_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the semi-supervised grid over arms, label fractions and seeds.
    Protocol {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// pretrained_frozen, random_frozen
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<Arm>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run the pretrained arm with pretext components removed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Components to drop: alignment, noise, distance, maskpred, masking (default all).
        #[arg(long, value_delimiter = ',')]
        drop: Option<Vec<Drop>>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare latent aggregation methods on shared pretrained encoders.
    Aggregate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// concat, mean, sum (default all).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Aggregation>>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write aggregated latents of one split to `embeddings.csv`.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[command(flatten)]
        out: OutArgs,
    },
}

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<omics_ssl::Error> for CliError {
    fn from(e: omics_ssl::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SELF_OMICS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("SELF_OMICS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
