use std::path::{Path, PathBuf};

use jerkgen::data::container::sha256_hex;
use jerkgen::drivetrain::{default_vehicles, GridSpec, VehicleSpec};
use jerkgen::latent::{TsneConfig, DEFAULT_K, DEFAULT_TAU, GL_ITERATIONS};
use jerkgen::signal::StftConfig;
use jerkgen::vae::{ModelKind, TrainingConfig};
use jerkgen::{seed, Error, Result};
use serde::{Deserialize, Serialize};

/// Griffin-Lim and k-NN settings shared by `generate`, `envelope` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub gl_iterations: usize,
    pub k: usize,
    pub tau: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            gl_iterations: GL_ITERATIONS,
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
        }
    }
}

/// One JSON document describing a whole run. Seed fields inside the
/// `training` and `tsne` sections are ignored: every stream is derived from
/// `master_seed` by name (see [`RunConfig::seed`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub vehicles: Vec<VehicleSpec>,
    pub grid: GridSpec,
    pub stft: StftConfig,
    pub training: TrainingConfig,
    pub tsne: TsneConfig,
    pub generation: GenerationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("runs"),
            vehicles: default_vehicles(),
            grid: GridSpec::default(),
            stft: StftConfig::default(),
            training: TrainingConfig::default(),
            tsne: TsneConfig::default(),
            generation: GenerationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            context: format!("reading config {}", path.display()),
            source: e,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The file at `path`, or defaults when absent.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.vehicles {
            v.params.validate()?;
        }
        self.grid.validate(self.vehicles.len())?;
        self.stft.validate()?;
        self.training.validate()?;
        self.tsne.validate()?;
        let g = &self.generation;
        if g.gl_iterations == 0 || g.k == 0 || !(g.tau > 0.0) {
            return Err(Error::Config(
                "generation needs gl_iterations ≥ 1, k ≥ 1 and tau > 0".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Seed of the named stream: `derive(master_seed, [name])`.
    pub fn seed(&self, name: &str) -> u64 {
        seed::derive(self.master_seed, &[name])
    }

    pub fn training_for(&self, kind: ModelKind) -> TrainingConfig {
        TrainingConfig {
            model_kind: kind,
            seed: seed::derive(self.master_seed, &["train", kind.label()]),
            ..self.training.clone()
        }
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            seed: self.seed("tsne"),
            ..self.tsne.clone()
        }
    }
}
