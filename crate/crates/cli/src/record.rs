//! `run.json`: what a subcommand read, which seeds it used and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use jerkgen::data::container::sha256_hex;
use jerkgen::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Input path as given → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

/// Collects the files a subcommand writes under one output directory.
pub struct Recorder {
    out: PathBuf,
    record: RunRecord,
}

pub(crate) fn io_err(context: String) -> impl FnOnce(std::io::Error) -> Error {
    move |source| Error::Io { context, source }
}

impl Recorder {
    pub fn new(command: &str, config: &RunConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
        Ok(Self {
            out: out.to_path_buf(),
            record: RunRecord {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_sha256: config.hash(),
                master_seed: config.master_seed,
                seeds: BTreeMap::new(),
                inputs: BTreeMap::new(),
                artifacts: BTreeMap::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn seed(&mut self, name: &str, value: u64) -> u64 {
        self.record.seeds.insert(name.to_string(), value);
        value
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
        self.record
            .inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Hashes a file already written under the output directory.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
        let rel = path.strip_prefix(&self.out).unwrap_or(path);
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        self.record.artifacts.insert(key, sha256_hex(&bytes));
        Ok(())
    }

    /// Writes `contents` to `name` under the output directory and records it.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(format!("creating {}", parent.display())))?;
        }
        fs::write(&path, contents).map_err(io_err(format!("writing {}", path.display())))?;
        self.artifact(&path)?;
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(&self.record).map_err(|e| Error::Json {
            context: RUN_FILE.into(),
            source: e,
        })?;
        let path = self.out.join(RUN_FILE);
        fs::write(&path, json + "\n").map_err(io_err(format!("writing {}", path.display())))?;
        Ok(path)
    }
}
