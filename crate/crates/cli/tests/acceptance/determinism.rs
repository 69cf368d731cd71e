//! Two complete command-line runs from one master seed, compared file by file.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use crate::Outcome;

/// Every command with its artifacts; training is shortened to keep two full
/// passes affordable, everything else runs at its defaults.
const CONFIG: &str = r#"{"master_seed": 17, "output_dir": "runs", "training": {"epochs": 3}}"#;

const STEPS: &[&[&str]] = &[
    &["synth", "--config", "config.json"],
    &[
        "prepare",
        "--manifest",
        "runs/synth/manifest.json",
        "--config",
        "config.json",
    ],
    &[
        "train",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--model",
        "vae",
        "--config",
        "config.json",
    ],
    &[
        "train",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--model",
        "cvae",
        "--config",
        "config.json",
    ],
    &[
        "train",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--model",
        "gmm-cvae",
        "--config",
        "config.json",
    ],
    &[
        "evaluate",
        "--ckpt",
        "runs/train-vae/checkpoint.jgen",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
    &[
        "evaluate",
        "--ckpt",
        "runs/train-cvae/checkpoint.jgen",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
    &[
        "evaluate",
        "--ckpt",
        "runs/train-gmm-cvae/checkpoint.jgen",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
    &[
        "latent-map",
        "--ckpt",
        "runs/train-vae/checkpoint.jgen",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
    &[
        "generate",
        "--ckpt",
        "runs/train-vae/checkpoint.jgen",
        "--category",
        "vehicle:1",
        "--n",
        "4",
        "--svg",
        "--config",
        "config.json",
    ],
    &[
        "generate",
        "--ckpt",
        "runs/train-cvae/checkpoint.jgen",
        "--torque",
        "500",
        "--n",
        "4",
        "--config",
        "config.json",
    ],
    &[
        "generate",
        "--ckpt",
        "runs/train-gmm-cvae/checkpoint.jgen",
        "--torque",
        "-120",
        "--n",
        "4",
        "--config",
        "config.json",
    ],
    &[
        "envelope",
        "--ckpt",
        "runs/train-vae/checkpoint.jgen",
        "--sample",
        "2",
        "--n",
        "200",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
    &[
        "compare",
        "--ckpt",
        "runs/train-cvae/checkpoint.jgen",
        "--ckpt",
        "runs/train-gmm-cvae/checkpoint.jgen",
        "--dataset",
        "runs/prepare/dataset.jgen",
        "--config",
        "config.json",
    ],
];

fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("config.json"), CONFIG).unwrap();
    for args in STEPS {
        let out = Command::new(env!("CARGO_BIN_EXE_jerkgen"))
            .args(*args)
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            return Err(format!(
                "{args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files(root, &path, out);
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

pub fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = pipeline(d.path()) {
            return Outcome::new(false, e);
        }
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    files(a.path(), a.path(), &mut fa);
    files(b.path(), b.path(), &mut fb);
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let count = |ext: &str| fa.keys().filter(|k| k.ends_with(ext)).count();
    Outcome::new(
        fa.len() == fb.len() && differing.is_empty(),
        format!(
            "{} files ({} checkpoints, {} csv, {} json) across {} commands, {} differ{}",
            fa.len(),
            fa.keys().filter(|k| k.ends_with("checkpoint.jgen")).count(),
            count(".csv"),
            count(".json"),
            STEPS.len(),
            differing.len(),
            differing
                .first()
                .map_or(String::new(), |k| format!(" (first: {k})"))
        ),
    )
}
