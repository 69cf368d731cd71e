//! Command-line front end: every subcommand reads a [`RunConfig`], writes its
//! artifacts under one output directory and records them in `run.json`.

pub mod commands;
pub mod config;
pub mod record;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use jerkgen::latent::Category;
use jerkgen::vae::ModelKind;
use jerkgen::ErrorClass;

pub use config::{GenerationConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "jerkgen",
    version,
    about = "Synthetic drivetrain jerk generation with VAE, CVAE and GMM-CVAE models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Vae,
    Cvae,
    GmmCvae,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Vae => ModelKind::Vae,
            ModelArg::Cvae => ModelKind::Cvae,
            ModelArg::GmmCvae => ModelKind::GmmCvae,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the drivetrain grid and write a manifest with one CSV per signal.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationarity gate, STFT, normalization and split; writes the dataset cache.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model and write its best-validation checkpoint and loss history.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Reconstruction metrics on the test split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// t-SNE embedding of training latents with per-category Gaussians.
    LatentMap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// New spectrograms and jerk signals from the prior, a torque condition or a latent-map category.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// `vehicle:N`, `torque_bin:N` or a bare bin index.
        #[arg(long, conflicts_with = "torque")]
        category: Option<Category>,
        /// Condition in Nm for conditional models.
        #[arg(long, allow_negative_numbers = true)]
        torque: Option<f64>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write SVG plots of each signal and spectrum.
        #[arg(long)]
        svg: bool,
        /// Latent map from `latent-map` (defaults to `<ckpt dir>/latent-map/latent_map.json`).
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mean and spread of decoded posterior draws around one held-out sample.
    Envelope {
        #[arg(long)]
        ckpt: PathBuf,
        /// Index into the test split.
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time-domain MSE of the linear physics baseline and of conditional models on the test split.
    Compare {
        /// Repeat for one column per model.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

pub fn run(cli: Cli) -> jerkgen::Result<()> {
    commands::dispatch(cli.command)
}
