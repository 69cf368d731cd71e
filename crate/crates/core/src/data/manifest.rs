//! Dataset manifest: a versioned JSON index of per-signal CSV files and labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drivetrain::{torque_bin, RawSignal, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::par;
use crate::signal::io::{read_time_series, write_file, write_time_series};
use crate::signal::DEFAULT_SIGNAL_LEN;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub signal_file: String,
    pub torque_nm: f64,
    pub rpm: f64,
    pub vehicle_type: usize,
    pub torque_bin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub signals: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Versioned(Manifest),
    Bare(Vec<ManifestEntry>),
}

impl Manifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let file: ManifestFile =
            serde_json::from_str(text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let manifest = match file {
            ManifestFile::Versioned(m) => m,
            ManifestFile::Bare(signals) => Manifest {
                version: MANIFEST_VERSION,
                signals,
            },
        };
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: manifest.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(manifest)
    }
}

/// Writes `signals/NNNN.csv` under `dir` plus `dir/manifest.json`; returns the manifest path.
pub fn write_manifest(dir: &Path, signals: &[RawSignal]) -> Result<PathBuf> {
    let width = signals.len().max(1).to_string().len().max(4);
    let mut entries = Vec::with_capacity(signals.len());
    for (i, s) in signals.iter().enumerate() {
        let rel = format!("signals/{i:0width$}.csv");
        write_time_series(&dir.join(&rel), &s.jerk)?;
        entries.push(ManifestEntry {
            signal_file: rel,
            torque_nm: s.torque_nm,
            rpm: s.rpm,
            vehicle_type: s.vehicle_type,
            torque_bin: s.torque_bin,
            seed: s.seed,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        signals: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    let path = dir.join("manifest.json");
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

/// Loads every signal named by the manifest at `path`.
pub fn ingest(path: &Path) -> Result<Vec<RawSignal>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest = Manifest::parse(path, &text)?;
    if manifest.signals.is_empty() {
        log::warn!("manifest {} lists no signals", path.display());
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    par::try_map_range(manifest.signals.len(), |i| {
        load_entry(base, &manifest.signals[i])
    })
}

fn load_entry(base: &Path, e: &ManifestEntry) -> Result<RawSignal> {
    let file = base.join(&e.signal_file);
    if !file.is_file() {
        return Err(Error::io(
            format!("signal file {}", file.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
        ));
    }
    let jerk = read_time_series(&file, SAMPLE_RATE)?;
    if jerk.len() < DEFAULT_SIGNAL_LEN {
        return Err(Error::Length(format!(
            "{}: {} samples, need at least {DEFAULT_SIGNAL_LEN}",
            file.display(),
            jerk.len()
        )));
    }
    let bin = torque_bin(e.torque_nm);
    if bin != e.torque_bin {
        return Err(Error::Integrity {
            path: file,
            reason: format!(
                "stored torque bin {} but {} Nm falls in bin {bin}",
                e.torque_bin, e.torque_nm
            ),
        });
    }
    Ok(RawSignal {
        jerk,
        torque_nm: e.torque_nm,
        rpm: e.rpm,
        vehicle_type: e.vehicle_type,
        torque_bin: e.torque_bin,
        seed: e.seed,
    })
}
