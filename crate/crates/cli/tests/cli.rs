use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jerkgen_cli::RunConfig;
use serde_json::Value;

fn jerkgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jerkgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let out = jerkgen(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small but complete config: two epochs, short t-SNE and Griffin-Lim runs.
fn write_config(dir: &Path, master_seed: u64) -> PathBuf {
    let cfg = serde_json::json!({
        "master_seed": master_seed,
        "output_dir": dir.join("runs"),
        "training": {"epochs": 2},
        "tsne": {"iterations": 250},
        "generation": {"gl_iterations": 20}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn run_record(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

fn artifacts(dir: &Path) -> BTreeMap<String, String> {
    serde_json::from_value(run_record(dir)["artifacts"].clone()).unwrap()
}

struct Pipeline {
    runs: PathBuf,
    config: PathBuf,
}

impl Pipeline {
    fn dataset(&self) -> PathBuf {
        self.runs.join("prepare/dataset.jgen")
    }

    fn ckpt(&self, model: &str) -> PathBuf {
        self.runs.join(format!("train-{model}/checkpoint.jgen"))
    }
}

fn pipeline(dir: &Path, master_seed: u64, models: &[&str]) -> Pipeline {
    let config = write_config(dir, master_seed);
    let runs = dir.join("runs");
    let c = s(&config);
    ok(&["synth", "--config", c]);
    ok(&[
        "prepare",
        "--manifest",
        s(&runs.join("synth/manifest.json")),
        "--config",
        c,
    ]);
    let p = Pipeline {
        runs,
        config: config.clone(),
    };
    for m in models {
        ok(&[
            "train",
            "--dataset",
            s(&p.dataset()),
            "--model",
            m,
            "--config",
            c,
        ]);
        ok(&[
            "evaluate",
            "--ckpt",
            s(&p.ckpt(m)),
            "--dataset",
            s(&p.dataset()),
            "--config",
            c,
        ]);
    }
    p
}

#[test]
fn full_pipeline_emits_every_artifact_with_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tmp.path(), 3, &["vae"]);
    let c = s(&p.config);

    let synth = artifacts(&p.runs.join("synth"));
    assert_eq!(synth.len(), 321);
    assert!(synth.contains_key("manifest.json") && synth.contains_key("signals/0000.csv"));

    let prep = artifacts(&p.runs.join("prepare"));
    assert!(prep.contains_key("dataset.jgen") && prep.contains_key("adf_report.csv"));
    let train = artifacts(&p.runs.join("train-vae"));
    assert!(train.contains_key("checkpoint.jgen") && train.contains_key("history.csv"));
    let history = std::fs::read_to_string(p.runs.join("train-vae/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2 * 2);

    let report: Value = serde_json::from_str(
        &std::fs::read_to_string(p.runs.join("train-vae/evaluate/metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["n_pairs"], 32);
    for key in ["mse", "mae", "nmse", "nmae", "ssim", "snr_db", "psnr_db"] {
        assert!(report["average"][key].is_number(), "{key}");
    }

    let ck_path = p.ckpt("vae");
    let ck = s(&ck_path);
    ok(&[
        "latent-map",
        "--ckpt",
        ck,
        "--dataset",
        s(&p.dataset()),
        "--config",
        c,
    ]);
    let lm = p.runs.join("train-vae/latent-map");
    let csv = std::fs::read_to_string(lm.join("embedding.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("idx,z2_x,z2_y,vehicle,torque_bin"));
    assert_eq!(csv.lines().count(), 1 + 224);

    ok(&[
        "generate",
        "--ckpt",
        ck,
        "--category",
        "torque_bin:5",
        "--n",
        "3",
        "--seed",
        "4",
        "--svg",
        "--config",
        c,
    ]);
    let gen = artifacts(&p.runs.join("train-vae/generate"));
    for name in [
        "spectrogram_0002.csv",
        "spectrogram_0002.json",
        "jerk_0002.csv",
        "spectrum_0002.csv",
        "jerk_0002.svg",
        "summary.csv",
    ] {
        assert!(gen.contains_key(name), "{name}");
    }

    // every recorded checksum matches the file on disk
    for (dir, arts) in [
        (p.runs.join("synth"), synth),
        (p.runs.join("train-vae/generate"), gen),
    ] {
        for (rel, sum) in arts {
            let bytes = std::fs::read(dir.join(&rel)).unwrap();
            assert_eq!(jerkgen::data::container::sha256_hex(&bytes), sum, "{rel}");
        }
    }
    let rec = run_record(&p.runs.join("train-vae"));
    assert_eq!(rec["master_seed"], 3);
    assert!(rec["seeds"]["train"].is_u64());
}

#[test]
fn same_config_reproduces_identical_checksums() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = pipeline(a.path(), 5, &["cvae"]);
    let pb = pipeline(b.path(), 5, &["cvae"]);
    for sub in ["synth", "prepare", "train-cvae", "train-cvae/evaluate"] {
        assert_eq!(
            artifacts(&pa.runs.join(sub)),
            artifacts(&pb.runs.join(sub)),
            "{sub}"
        );
    }
    for p in [&pa, &pb] {
        ok(&[
            "generate",
            "--ckpt",
            s(&p.ckpt("cvae")),
            "--torque",
            "450",
            "--n",
            "2",
            "--seed",
            "9",
            "--config",
            s(&p.config),
        ]);
    }
    let ga = artifacts(&pa.runs.join("train-cvae/generate"));
    assert_eq!(ga, artifacts(&pb.runs.join("train-cvae/generate")));

    // a different master seed changes the data
    let c = tempfile::tempdir().unwrap();
    let cfg = write_config(c.path(), 6);
    ok(&["synth", "--config", s(&cfg)]);
    assert_ne!(
        artifacts(&pa.runs.join("synth")),
        artifacts(&c.path().join("runs/synth"))
    );
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tmp.path(), 1, &["cvae"]);
    let ck_path = p.ckpt("cvae");
    let ck = s(&ck_path);
    let c = s(&p.config);

    let out = jerkgen(&["generate", "--ckpt", ck, "--torque", "5000", "--config", c]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("5000"));

    assert_eq!(
        code(&jerkgen(&["generate", "--ckpt", ck, "--config", c])),
        1
    );
    assert_eq!(
        code(&jerkgen(&[
            "generate",
            "--ckpt",
            ck,
            "--category",
            "color:2"
        ])),
        1
    );
    assert_eq!(code(&jerkgen(&["train", "--dataset", s(&p.dataset())])), 1);
    assert_eq!(code(&jerkgen(&["no-such-command"])), 1);
    assert_eq!(code(&jerkgen(&["--help"])), 0);

    let out = jerkgen(&[
        "envelope",
        "--ckpt",
        ck,
        "--sample",
        "32",
        "--n",
        "4",
        "--dataset",
        s(&p.dataset()),
        "--config",
        c,
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(
        code(&jerkgen(&[
            "evaluate",
            "--ckpt",
            ck,
            "--dataset",
            s(&tmp.path().join("missing.jgen"))
        ])),
        2
    );

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"master_seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = jerkgen(&["synth", "--config", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let mut corrupt = std::fs::read(&p.ckpt("cvae")).unwrap();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0xff;
    let broken = tmp.path().join("broken.jgen");
    std::fs::write(&broken, corrupt).unwrap();
    assert_eq!(
        code(&jerkgen(&[
            "generate",
            "--ckpt",
            s(&broken),
            "--torque",
            "100",
            "--config",
            c
        ])),
        2
    );
}

#[test]
fn compare_reports_one_mse_per_column() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tmp.path(), 2, &["cvae", "gmm-cvae"]);
    let out = ok(&[
        "compare",
        "--ckpt",
        s(&p.ckpt("cvae")),
        "--ckpt",
        s(&p.ckpt("gmm-cvae")),
        "--dataset",
        s(&p.dataset()),
        "--config",
        s(&p.config),
    ]);
    assert!(out.starts_with("Metric | physics | cvae | gmm-cvae"));
    let report: Value = serde_json::from_str(
        &std::fs::read_to_string(p.runs.join("compare/compare.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["test_signals"], 32);
    let cols = report["columns"].as_array().unwrap();
    assert_eq!(cols.len(), 3);
    assert_eq!(cols[0]["model"], "physics");
    for col in cols {
        assert!(col["mse"].as_f64().unwrap() > 0.0);
    }

    let out = jerkgen(&[
        "compare",
        "--ckpt",
        s(&p.ckpt("cvae")),
        "--dataset",
        s(&p.dataset()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn envelope_writes_bounds_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tmp.path(), 4, &["gmm-cvae"]);
    ok(&[
        "envelope",
        "--ckpt",
        s(&p.ckpt("gmm-cvae")),
        "--sample",
        "3",
        "--n",
        "16",
        "--dataset",
        s(&p.dataset()),
        "--config",
        s(&p.config),
    ]);
    let dir = p.runs.join("train-gmm-cvae/envelope");
    let csv = std::fs::read_to_string(dir.join("envelope.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("t,mean,std,lower,upper,original,reconstruction")
    );
    assert_eq!(csv.lines().count(), 1 + 76);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("envelope.json")).unwrap()).unwrap();
    assert_eq!(summary["realizations"], 16);
    assert_eq!(summary["test_index"], 3);
}

#[test]
fn default_config_is_valid_and_hash_is_stable() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let other = RunConfig {
        master_seed: 1,
        ..RunConfig::default()
    };
    assert_ne!(other.hash(), cfg.hash());
    assert_ne!(
        cfg.training_for(jerkgen::vae::ModelKind::Vae).seed,
        cfg.training_for(jerkgen::vae::ModelKind::Cvae).seed
    );
    let partial: RunConfig = serde_json::from_str(r#"{"grid": {"repetitions": 2}}"#).unwrap();
    assert_eq!(partial.grid.repetitions, 2);
    assert_eq!(partial.stft, cfg.stft);
}
