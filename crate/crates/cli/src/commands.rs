use std::path::{Path, PathBuf};

use jerkgen::data::{ingest, prepare, write_manifest, Checkpoint, LabeledDataset, Manifest, Split};
use jerkgen::drivetrain::{physics_baseline, synth_dataset};
use jerkgen::latent::{
    generate_from_category, generate_signals, resample_around, to_signals, Category,
    EnvelopeConfig, Generated, LatentMap,
};
use jerkgen::metrics::{evaluate_suite, metrics_table, mse};
use jerkgen::signal::io::{write_spectrogram, write_time_series};
use jerkgen::signal::spectrum::{band_energy_fraction, power_spectrum, PLAUSIBLE_BANDS};
use jerkgen::vae::{history_csv, train, ModelKind};
use jerkgen::{seed, Error, Result};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::record::{io_err, Recorder};
use crate::{svg, Command};

pub const DATASET_FILE: &str = "dataset.jgen";
pub const CHECKPOINT_FILE: &str = "checkpoint.jgen";
pub const LATENT_MAP_FILE: &str = "latent_map.json";

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, out } => {
            let cfg = RunConfig::load(&config)?;
            synth_cmd(&cfg, &out_or(out, cfg.output_dir.join("synth")))
        }
        Command::Prepare {
            manifest,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            prepare_cmd(
                &cfg,
                &manifest,
                &out_or(out, cfg.output_dir.join("prepare")),
            )
        }
        Command::Train {
            dataset,
            model,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let kind = ModelKind::from(model);
            let out = out_or(out, cfg.output_dir.join(format!("train-{}", kind.label())));
            train_cmd(&cfg, &dataset, kind, &out)
        }
        Command::Evaluate {
            ckpt,
            dataset,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            evaluate_cmd(
                &cfg,
                &ckpt,
                &dataset,
                &out_or(out, beside(&ckpt, "evaluate")),
            )
        }
        Command::LatentMap {
            ckpt,
            dataset,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            latent_map_cmd(
                &cfg,
                &ckpt,
                &dataset,
                &out_or(out, beside(&ckpt, "latent-map")),
            )
        }
        Command::Generate {
            ckpt,
            category,
            torque,
            n,
            seed,
            svg,
            map,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let request = GenerateRequest {
                category,
                torque,
                n,
                seed,
                svg,
                map: map.unwrap_or_else(|| beside(&ckpt, "latent-map").join(LATENT_MAP_FILE)),
            };
            generate_cmd(
                &cfg,
                &ckpt,
                &request,
                &out_or(out, beside(&ckpt, "generate")),
            )
        }
        Command::Envelope {
            ckpt,
            sample,
            n,
            dataset,
            seed,
            out,
            config,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            envelope_cmd(
                &cfg,
                &ckpt,
                &dataset,
                sample,
                n,
                seed,
                &out_or(out, beside(&ckpt, "envelope")),
            )
        }
        Command::Compare {
            ckpt,
            dataset,
            config,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            compare_cmd(
                &cfg,
                &ckpt,
                &dataset,
                &out_or(out, cfg.output_dir.join("compare")),
            )
        }
    }
}

fn out_or(out: Option<PathBuf>, default: PathBuf) -> PathBuf {
    out.unwrap_or(default)
}

/// `<dir of path>/<name>`.
fn beside(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_pair(
    rec: &mut Recorder,
    ckpt: &Path,
    dataset: &Path,
) -> Result<(Checkpoint, LabeledDataset)> {
    rec.input(ckpt)?;
    rec.input(dataset)?;
    let ck = Checkpoint::load(ckpt)?;
    let ds = LabeledDataset::load(dataset)?;
    if ck.split_seed != ds.split_seed || ck.normalization != ds.normalization || ck.stft != ds.stft
    {
        return Err(Error::Config(format!(
            "checkpoint {} was trained on a different dataset than {}",
            ckpt.display(),
            dataset.display()
        )));
    }
    Ok((ck, ds))
}

pub fn synth_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("synth", cfg, out)?;
    let seed_ = rec.seed("synth", cfg.seed("synth"));
    let raw = synth_dataset(&cfg.grid, &cfg.vehicles, seed_)?;
    let manifest_path = write_manifest(out, &raw)?;
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(io_err(format!("reading {}", manifest_path.display())))?;
    for e in Manifest::parse(&manifest_path, &text)?.signals {
        rec.artifact(&out.join(&e.signal_file))?;
    }
    rec.artifact(&manifest_path)?;
    rec.finish()?;
    println!("wrote {} signals to {}", raw.len(), manifest_path.display());
    Ok(())
}

pub fn prepare_cmd(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("prepare", cfg, out)?;
    rec.input(manifest)?;
    let raw = ingest(manifest)?;
    let split_seed = rec.seed("split", cfg.seed("split"));
    let (ds, report) = prepare(&raw, &cfg.stft, split_seed)?;
    rec.write("adf_report.csv", report.to_csv().as_bytes())?;
    let path = rec.path(DATASET_FILE);
    ds.save(&path)?;
    rec.artifact(&path)?;
    rec.finish()?;
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| ds.indices(s).len());
    println!(
        "kept {}/{} stationary signals; train/val/test = {}/{}/{}; spectrogram {:?}",
        ds.len(),
        raw.len(),
        counts[0],
        counts[1],
        counts[2],
        ds.spectrogram_shape()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, dataset: &Path, kind: ModelKind, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("train", cfg, out)?;
    rec.input(dataset)?;
    let ds = LabeledDataset::load(dataset)?;
    let training = cfg.training_for(kind);
    rec.seed("train", training.seed);
    rec.seed("split", ds.split_seed);
    let outcome = train(&ds.train_data()?, &training, |e| {
        info!(
            "epoch {:>4}  train {:.4}  val {:.4} (recon {:.4}, kl {:.4})",
            e.epoch, e.train.total, e.val.total, e.val.recon, e.val.kl
        );
    })?;
    let ck = Checkpoint {
        model: outcome.best,
        stft: ds.stft.clone(),
        normalization: ds.normalization,
        training,
        split_seed: ds.split_seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
    };
    let path = rec.path(CHECKPOINT_FILE);
    ck.save(&path)?;
    rec.artifact(&path)?;
    rec.write("history.csv", history_csv(&outcome.history).as_bytes())?;
    rec.finish()?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "{}: best epoch {} of {}, validation loss {:.4} (epoch 1: {:.4})",
        kind.label(),
        outcome.best_epoch,
        outcome.history.len(),
        best.val.total,
        outcome.history[0].val.total
    );
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig, ckpt: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("evaluate", cfg, out)?;
    let (ck, ds) = load_pair(&mut rec, ckpt, dataset)?;
    let report = evaluate_suite(&ck, &ds, Split::Test)?;
    let table = metrics_table(&[&report]);
    rec.write("metrics.json", (report.to_json()? + "\n").as_bytes())?;
    rec.write("metrics.txt", table.as_bytes())?;
    rec.finish()?;
    print!("{table}");
    Ok(())
}

pub fn latent_map_cmd(cfg: &RunConfig, ckpt: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("latent-map", cfg, out)?;
    let (ck, ds) = load_pair(&mut rec, ckpt, dataset)?;
    let tsne = cfg.tsne_config();
    rec.seed("tsne", tsne.seed);
    let (map, run) = LatentMap::build(&ck, &ds, &tsne)?;
    rec.write("embedding.csv", map.embedding_csv().as_bytes())?;
    rec.write(
        "categories.json",
        (map.categories_json()? + "\n").as_bytes(),
    )?;
    let kl: String = std::iter::once("iteration,kl\n".to_string())
        .chain(
            run.kl_history
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{},{v:?}\n", i + 1)),
        )
        .collect();
    rec.write("tsne_kl.csv", kl.as_bytes())?;
    let json = serde_json::to_string(&map).map_err(|e| Error::Json {
        context: LATENT_MAP_FILE.into(),
        source: e,
    })?;
    rec.write(LATENT_MAP_FILE, json.as_bytes())?;
    rec.finish()?;
    println!(
        "embedded {} training latents (perplexity {}); final KL {:.4}",
        map.len(),
        run.perplexity,
        run.kl_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub struct GenerateRequest {
    pub category: Option<Category>,
    pub torque: Option<f64>,
    pub n: usize,
    pub seed: Option<u64>,
    pub svg: bool,
    pub map: PathBuf,
}

pub fn generate_cmd(cfg: &RunConfig, ckpt: &Path, req: &GenerateRequest, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("generate", cfg, out)?;
    rec.input(ckpt)?;
    let ck = Checkpoint::load(ckpt)?;
    let seed_ = rec.seed("generate", req.seed.unwrap_or_else(|| cfg.seed("generate")));
    let g = &cfg.generation;
    let items = match req.category {
        Some(cat) => {
            rec.input(&req.map)?;
            let text = std::fs::read_to_string(&req.map)
                .map_err(io_err(format!("reading {}", req.map.display())))?;
            let map: LatentMap = serde_json::from_str(&text).map_err(|e| Error::Json {
                context: req.map.display().to_string(),
                source: e,
            })?;
            generate_from_category(&ck, &map, cat, req.n, seed_, g.k, g.tau, g.gl_iterations)?
        }
        None => generate_signals(&ck, req.torque, req.n, seed_, g.gl_iterations)?,
    };
    write_generated(&mut rec, &items, req.svg)?;
    rec.finish()?;
    println!("generated {} signals in {}", items.len(), out.display());
    Ok(())
}

fn write_generated(rec: &mut Recorder, items: &[Generated], with_svg: bool) -> Result<()> {
    let mut summary = String::from("idx,rms,band_energy_fraction\n");
    for (i, g) in items.iter().enumerate() {
        let spec = rec.path(&format!("spectrogram_{i:04}.csv"));
        write_spectrogram(&spec, &g.spectrogram)?;
        rec.artifact(&spec)?;
        rec.artifact(&jerkgen::signal::io::sidecar_path(&spec))?;
        let jerk = rec.path(&format!("jerk_{i:04}.csv"));
        write_time_series(&jerk, &g.jerk)?;
        rec.artifact(&jerk)?;

        let (freqs, power) = power_spectrum(&g.jerk);
        let mut csv = String::from("freq_hz,power\n");
        for (f, p) in freqs.iter().zip(&power) {
            csv.push_str(&format!("{f:?},{p:?}\n"));
        }
        rec.write(&format!("spectrum_{i:04}.csv"), csv.as_bytes())?;

        let rms =
            (g.jerk.samples.iter().map(|v| v * v).sum::<f64>() / g.jerk.len().max(1) as f64).sqrt();
        summary.push_str(&format!(
            "{i},{rms:?},{:?}\n",
            band_energy_fraction(&g.jerk, &PLAUSIBLE_BANDS)
        ));

        if with_svg {
            let t: Vec<f64> = (0..g.jerk.len())
                .map(|k| k as f64 / g.jerk.sample_rate)
                .collect();
            let plot = svg::line_plot(
                &format!("generated jerk {i}"),
                "time (s)",
                "jerk (m/s³)",
                &t,
                &g.jerk.samples,
            );
            rec.write(&format!("jerk_{i:04}.svg"), plot.as_bytes())?;
            let plot = svg::line_plot(
                &format!("spectrum {i}"),
                "frequency (Hz)",
                "power",
                &freqs,
                &power,
            );
            rec.write(&format!("spectrum_{i:04}.svg"), plot.as_bytes())?;
        }
    }
    rec.write("summary.csv", summary.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeSummary {
    test_index: usize,
    dataset_index: usize,
    torque_nm: f64,
    vehicle_type: usize,
    realizations: usize,
    coverage_3std: f64,
}

pub fn envelope_cmd(
    cfg: &RunConfig,
    ckpt: &Path,
    dataset: &Path,
    sample: usize,
    n: usize,
    seed_: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut rec = Recorder::new("envelope", cfg, out)?;
    let (ck, ds) = load_pair(&mut rec, ckpt, dataset)?;
    let test = ds.indices(Split::Test);
    let &idx = test.get(sample).ok_or_else(|| {
        Error::Range(format!(
            "sample {sample} is outside the {}-signal test split",
            test.len()
        ))
    })?;
    let config = EnvelopeConfig {
        samples: n,
        gl_iterations: cfg.generation.gl_iterations,
        noise_scale: 1.0,
        seed: rec.seed("envelope", seed_.unwrap_or_else(|| cfg.seed("envelope"))),
    };
    let env = resample_around(&ck, &ds.samples[idx], &config)?;
    rec.write("envelope.csv", env.to_csv().as_bytes())?;
    let labels = &ds.samples[idx].labels;
    let summary = EnvelopeSummary {
        test_index: sample,
        dataset_index: idx,
        torque_nm: labels.torque_nm,
        vehicle_type: labels.vehicle_type,
        realizations: n,
        coverage_3std: env.coverage(3.0),
    };
    rec.write(
        "envelope.json",
        (to_json(&summary, "envelope.json")? + "\n").as_bytes(),
    )?;
    rec.finish()?;
    println!(
        "original within mean ± 3 std at {:.1}% of time samples",
        100.0 * summary.coverage_3std
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareColumn {
    pub model: String,
    pub mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub test_signals: usize,
    pub columns: Vec<CompareColumn>,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let head: Vec<&str> = self.columns.iter().map(|c| c.model.as_str()).collect();
        let row: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{:.4}", c.mse))
            .collect();
        format!("Metric | {}\nMSE | {}\n", head.join(" | "), row.join(" | "))
    }
}

/// Time-domain MSE over the test split: the linear physics baseline at each
/// signal's torque and vehicle, then one prior sample per signal from each
/// conditional checkpoint decoded at that torque.
pub fn compare_report(
    cfg: &RunConfig,
    models: &[(String, Checkpoint)],
    ds: &LabeledDataset,
    seed_: u64,
) -> Result<CompareReport> {
    let test = ds.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptyDataset("test split is empty".into()));
    }
    let originals: Vec<&[f64]> = test
        .iter()
        .map(|&i| ds.samples[i].jerk.samples.as_slice())
        .collect();

    let baseline = test
        .iter()
        .map(|&i| {
            let l = &ds.samples[i].labels;
            let vehicle = cfg.vehicles.get(l.vehicle_type).ok_or_else(|| {
                Error::Config(format!("config has no vehicle type {}", l.vehicle_type))
            })?;
            physics_baseline(&cfg.grid, vehicle, l.torque_nm).map(|s| s.samples)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec![CompareColumn {
        model: "physics".into(),
        mse: mse(
            &baseline.iter().map(Vec::as_slice).collect::<Vec<_>>(),
            &originals,
        )?,
    }];

    for (name, ck) in models {
        if !ck.model.kind().is_conditional() {
            return Err(Error::Usage(format!(
                "compare needs conditional models, got {name}"
            )));
        }
        let mut generated = Vec::with_capacity(test.len());
        for (j, &i) in test.iter().enumerate() {
            let s = seed::derive_indexed(seed_, "test", j as u64);
            let spec = ck.generate_conditional(ds.samples[i].labels.torque_nm, 1, s)?;
            generated.push(
                to_signals(&spec, s, cfg.generation.gl_iterations)?
                    .remove(0)
                    .samples,
            );
        }
        columns.push(CompareColumn {
            model: name.clone(),
            mse: mse(
                &generated.iter().map(Vec::as_slice).collect::<Vec<_>>(),
                &originals,
            )?,
        });
    }
    Ok(CompareReport {
        test_signals: test.len(),
        columns,
    })
}

pub fn compare_cmd(cfg: &RunConfig, ckpts: &[PathBuf], dataset: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("compare", cfg, out)?;
    let mut models = Vec::new();
    let mut ds = None;
    for path in ckpts {
        let (ck, d) = load_pair(&mut rec, path, dataset)?;
        models.push((ck.model.kind().label().to_string(), ck));
        ds = Some(d);
    }
    let ds = ds.ok_or_else(|| Error::Usage("compare needs at least one --ckpt".into()))?;
    let seed_ = rec.seed("compare", cfg.seed("compare"));
    let report = compare_report(cfg, &models, &ds, seed_)?;
    rec.write(
        "compare.json",
        (to_json(&report, "compare.json")? + "\n").as_bytes(),
    )?;
    rec.write("compare.txt", report.table().as_bytes())?;
    rec.finish()?;
    print!("{}", report.table());
    Ok(())
}

fn to_json<T: Serialize>(value: &T, context: &str) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: context.into(),
        source: e,
    })
}
