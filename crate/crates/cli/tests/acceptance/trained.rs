//! Criteria on the three models trained with the default configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use jerkgen::data::{Checkpoint, LabeledDataset, Split};
use jerkgen::drivetrain::{torque_bin, TORQUE_BINS};
use jerkgen::latent::{
    generate_from_category, generate_signals, knn_inverse_map, knn_weights, resample_around,
    Category, EnvelopeConfig, Generated, LatentMap, DEFAULT_K, DEFAULT_TAU, GL_ITERATIONS,
};
use jerkgen::metrics::{evaluate_suite, silhouette, spearman};
use jerkgen::seed;
use jerkgen::signal::spectrum::{band_energy_fraction, PLAUSIBLE_BANDS};
use jerkgen::vae::{recon_nll, Condition, ModelKind, INPUT_HEIGHT, INPUT_WIDTH};
use jerkgen_cli::commands::{prepare_cmd, synth_cmd, train_cmd, CHECKPOINT_FILE, DATASET_FILE};
use jerkgen_cli::RunConfig;
use rand::Rng;

use crate::Outcome;

const KINDS: [ModelKind; 3] = [ModelKind::Vae, ModelKind::Cvae, ModelKind::GmmCvae];
const SECONDS_FILE: &str = "train_seconds.txt";

struct Model {
    kind: ModelKind,
    ck: Checkpoint,
    /// Validation total per epoch.
    val: Vec<f64>,
    seconds: Option<f64>,
}

struct Run {
    _tmp: Option<tempfile::TempDir>,
    cfg: RunConfig,
    ds: LabeledDataset,
    models: Vec<Model>,
    map: Option<LatentMap>,
}

/// Lazily trained models shared by criteria 8 to 11.
pub struct Trained(Option<Run>);

impl Trained {
    pub fn new() -> Self {
        Self(None)
    }

    fn run(&mut self) -> &mut Run {
        self.0.get_or_insert_with(setup)
    }
}

fn validation_totals(history: &str) -> Vec<f64> {
    history
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1] == "val").then(|| f[2].parse().unwrap())
        })
        .collect()
}

fn setup() -> Run {
    let (tmp, dir) = match std::env::var_os("JERKGEN_ACCEPTANCE_DIR") {
        Some(d) => (None, PathBuf::from(d)),
        None => {
            let t = tempfile::tempdir().unwrap();
            let d = t.path().to_path_buf();
            (Some(t), d)
        }
    };
    let cfg = RunConfig {
        master_seed: 0,
        output_dir: dir.clone(),
        ..RunConfig::default()
    };
    let dataset = dir.join("prepare").join(DATASET_FILE);
    if !dataset.exists() {
        synth_cmd(&cfg, &dir.join("synth")).unwrap();
        prepare_cmd(&cfg, &dir.join("synth/manifest.json"), &dir.join("prepare")).unwrap();
    }
    let ds = LabeledDataset::load(&dataset).unwrap();
    let models = KINDS
        .iter()
        .map(|&kind| load_or_train(&cfg, &dataset, &dir, kind))
        .collect();
    Run {
        _tmp: tmp,
        cfg,
        ds,
        models,
        map: None,
    }
}

fn load_or_train(cfg: &RunConfig, dataset: &Path, dir: &Path, kind: ModelKind) -> Model {
    let out = dir.join(format!("train-{}", kind.label()));
    let ckpt = out.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        let start = Instant::now();
        train_cmd(cfg, dataset, kind, &out).unwrap();
        std::fs::write(
            out.join(SECONDS_FILE),
            format!("{}\n", start.elapsed().as_secs_f64()),
        )
        .unwrap();
    }
    let seconds = std::fs::read_to_string(out.join(SECONDS_FILE))
        .ok()
        .map(|s| s.trim().parse().unwrap());
    Model {
        kind,
        ck: Checkpoint::load(&ckpt).unwrap(),
        val: validation_totals(&std::fs::read_to_string(out.join("history.csv")).unwrap()),
        seconds,
    }
}

impl Run {
    fn model(&self, kind: ModelKind) -> &Model {
        self.models.iter().find(|m| m.kind == kind).unwrap()
    }

    fn map(&mut self) -> &LatentMap {
        if self.map.is_none() {
            let ck = &self.model(ModelKind::Vae).ck;
            self.map = Some(
                LatentMap::build(ck, &self.ds, &self.cfg.tsne_config())
                    .unwrap()
                    .0,
            );
        }
        self.map.as_ref().unwrap()
    }
}

pub fn training(t: &mut Trained) -> Outcome {
    let run = t.run();
    let (mut ratios_ok, mut rest_ok) = (true, true);
    let mut parts = Vec::new();
    for m in &run.models {
        let first = m.val[0];
        let best = m.val[m.ck.best_epoch - 1];
        let ratio = best / first;
        // loss of a perfect reconstruction with no KL cost
        let pixels = INPUT_HEIGHT * INPUT_WIDTH;
        let floor = recon_nll(
            &vec![0.0; pixels],
            &vec![0.0; pixels],
            m.ck.training.lambda_out,
        )
        .unwrap();
        let ssim = evaluate_suite(&m.ck, &run.ds, Split::Test)
            .unwrap()
            .average
            .ssim;
        let time_ok = m.seconds.is_some_and(|s| s <= 1800.0);
        ratios_ok &= ratio <= 0.5;
        rest_ok &= ssim >= 0.5 && time_ok && m.ck.epochs_run == 300;
        let secs = m.seconds.map_or("not measured (reused)".to_string(), |s| {
            format!("{:.0} s", s)
        });
        parts.push(format!(
            "{}: best/epoch-1 {ratio:.3} (epoch {} of {}, floor {:.3}, above floor {:.3}), ssim {ssim:.3}, {secs}",
            m.kind.label(),
            m.ck.best_epoch,
            m.ck.epochs_run,
            floor / first,
            (best - floor) / (first - floor),
        ));
    }
    Outcome::split(
        ratios_ok,
        rest_ok,
        format!(
            "{} [needs ratio <= 0.5, ssim >= 0.5, <= 1800 s]",
            parts.join("; ")
        ),
    )
}

fn band_fractions(signals: &[Generated]) -> (f64, f64) {
    let f: Vec<f64> = signals
        .iter()
        .map(|g| band_energy_fraction(&g.jerk, &PLAUSIBLE_BANDS))
        .collect();
    (
        f.iter().sum::<f64>() / f.len() as f64,
        f.iter().copied().fold(1.0, f64::min),
    )
}

fn mean_rms(signals: &[Generated]) -> f64 {
    signals.iter().map(|g| g.jerk.rms()).sum::<f64>() / signals.len() as f64
}

/// Mean recon_nll over the test set with every condition replaced by `torque_of`.
fn test_recon(ck: &Checkpoint, ds: &LabeledDataset, torque_of: impl Fn(f64) -> f64) -> f64 {
    let idx = ds.indices(Split::Test);
    let x = ds.tensor(&idx).unwrap();
    let c: Vec<f64> = idx
        .iter()
        .map(|&i| {
            Condition::new(torque_of(ds.samples[i].labels.torque_nm))
                .unwrap()
                .normalized()
        })
        .collect();
    let y = ck.model.reconstruct(&x, Some(&c)).unwrap();
    let lambda = ck.training.lambda_out;
    (0..idx.len())
        .map(|i| recon_nll(x.item(i), y.item(i), lambda).unwrap())
        .sum::<f64>()
        / idx.len() as f64
}

pub fn plausibility(t: &mut Trained) -> Outcome {
    let run = t.run();
    let base = run.cfg.seed("acceptance-generate");
    let vae = run.model(ModelKind::Vae).ck.clone();
    let cvae_ck = run.model(ModelKind::Cvae).ck.clone();
    let consistency = (
        test_recon(&cvae_ck, &run.ds, |t| t),
        test_recon(&cvae_ck, &run.ds, |t| {
            if t + 500.0 <= 1000.0 {
                t + 500.0
            } else {
                t - 500.0
            }
        }),
    );
    let map = run.map();
    let mut vae_signals = Vec::new();
    for (i, cat) in map.categories().into_iter().enumerate() {
        let s = seed::derive_indexed(base, "category", i as u64);
        vae_signals.extend(
            generate_from_category(&vae, map, cat, 20, s, DEFAULT_K, DEFAULT_TAU, GL_ITERATIONS)
                .unwrap(),
        );
    }
    // the bins holding 0-50 Nm and 1000 Nm
    let bin_rms = [torque_bin(25.0), torque_bin(1000.0)].map(|b| {
        let s = seed::derive_indexed(base, "bin", b as u64);
        mean_rms(
            &generate_from_category(
                &vae,
                map,
                Category::TorqueBin(b),
                50,
                s,
                DEFAULT_K,
                DEFAULT_TAU,
                GL_ITERATIONS,
            )
            .unwrap(),
        )
    });
    let levels: Vec<f64> = (0..10).map(|i| 50.0 + 950.0 * i as f64 / 9.0).collect();
    let sweep = |kind: ModelKind| {
        let ck = &run.model(kind).ck;
        let mut torque = Vec::new();
        let mut level_means = Vec::new();
        let mut signals = Vec::new();
        for (i, &tq) in levels.iter().enumerate() {
            let s = seed::derive_indexed(base, kind.label(), i as u64);
            let g = generate_signals(ck, Some(tq), 20, s, GL_ITERATIONS).unwrap();
            torque.extend(std::iter::repeat_n(tq, g.len()));
            level_means.push(mean_rms(&g));
            signals.extend(g);
        }
        let rms: Vec<f64> = signals.iter().map(|g| g.jerk.rms()).collect();
        (
            signals,
            spearman(&levels, &level_means).unwrap(),
            spearman(&torque, &rms).unwrap(),
        )
    };
    let (cvae, rho, rho_pairs) = sweep(ModelKind::Cvae);
    let (gmm, rho_gmm, _) = sweep(ModelKind::GmmCvae);
    let end_rms = [50.0, 800.0].map(|tq| {
        mean_rms(
            &generate_signals(
                &cvae_ck,
                Some(tq),
                100,
                seed::derive_indexed(base, "ends", tq as u64),
                GL_ITERATIONS,
            )
            .unwrap(),
        )
    });
    let mut bands_ok = true;
    let mut parts = Vec::new();
    for (name, signals) in [("vae", &vae_signals), ("cvae", &cvae), ("gmm-cvae", &gmm)] {
        let (mean, min) = band_fractions(signals);
        bands_ok &= mean >= 0.6;
        parts.push(format!(
            "{name} {mean:.3} (min {min:.3}, n={})",
            signals.len()
        ));
    }
    let consistent = consistency.0 < consistency.1;
    let bins_ordered = bin_rms[1] > bin_rms[0];
    Outcome::split(
        rho >= 0.5 && end_rms[1] > end_rms[0],
        bands_ok && consistent && bins_ordered,
        format!(
            "energy in 0-2 Hz and 8-12 Hz, mean per signal: {} (>= 0.6); cvae spearman of level mean rms vs torque {rho:.3} over 10 levels x 20 \
             (>= 0.5), {rho_pairs:.3} over the 200 pairs, gmm-cvae {rho_gmm:.3}; cvae mean rms at 800 Nm {:.2} vs 50 Nm {:.2} (must exceed); \
             cvae test recon_nll same condition {:.2} vs displaced 500 Nm {:.2} (must be lower); vae bin {} mean rms {:.2} vs bin {} {:.2} (must exceed)",
            parts.join(", "),
            end_rms[1],
            end_rms[0],
            consistency.0,
            consistency.1,
            torque_bin(1000.0),
            bin_rms[1],
            torque_bin(25.0),
            bin_rms[0],
        ),
    )
}

pub fn latent_map(t: &mut Trained) -> Outcome {
    let map = t.run().map();
    let points: Vec<Vec<f64>> = map.embedding.iter().map(|p| p.to_vec()).collect();
    let vehicles: Vec<usize> = map.labels.iter().map(|l| l.vehicle_type).collect();
    let vehicle_sil = silhouette(&points, &vehicles).unwrap();
    let mid: Vec<usize> = (0..map.len())
        .filter(|&i| (1..TORQUE_BINS - 1).contains(&map.labels[i].torque_bin))
        .collect();
    let mid_points: Vec<Vec<f64>> = mid.iter().map(|&i| points[i].clone()).collect();
    let mid_bins: Vec<usize> = mid.iter().map(|&i| map.labels[i].torque_bin).collect();
    let torque_sil = silhouette(&mid_points, &mid_bins).unwrap();

    let (lo, hi) = map
        .embedding
        .iter()
        .fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1])],
                [hi[0].max(p[0]), hi[1].max(p[1])],
            )
        });
    let mut rng = seed::rng(10);
    let (mut exact_err, mut uniform_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let q = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
        ];
        let d2 = |p: &[f64; 2]| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        let nearest = (0..map.len())
            .min_by(|&a, &b| d2(&map.embedding[a]).total_cmp(&d2(&map.embedding[b])))
            .unwrap();
        let z = knn_inverse_map(q, map, 1, DEFAULT_TAU).unwrap();
        exact_err = z
            .iter()
            .zip(&map.latents[nearest])
            .map(|(a, b)| (a - b).abs())
            .fold(exact_err, f64::max);
        let (idx, w) = knn_weights(q, map, DEFAULT_K, 1e12).unwrap();
        assert_eq!(idx.len(), DEFAULT_K);
        uniform_err = w
            .iter()
            .map(|v| (v - 1.0 / DEFAULT_K as f64).abs())
            .fold(uniform_err, f64::max);
    }
    Outcome::new(
        vehicle_sil > torque_sil && exact_err <= 1e-6 && uniform_err <= 1e-6,
        format!(
            "silhouette by vehicle {vehicle_sil:.3} vs by torque bin over bins 1-{} {torque_sil:.3} ({} of {} points); k=1 error {exact_err:.1e}, large-tau weight error {uniform_err:.1e} (<= 1e-6)",
            TORQUE_BINS - 2,
            mid.len(),
            map.len()
        ),
    )
}

pub fn envelope(t: &mut Trained) -> Outcome {
    let run = t.run();
    let ck = &run.model(ModelKind::Vae).ck;
    let test = run.ds.indices(Split::Test);
    let sample = &run.ds.samples[test[0]];
    let cfg = EnvelopeConfig {
        samples: 10_000,
        gl_iterations: GL_ITERATIONS,
        noise_scale: 1.0,
        seed: run.cfg.seed("acceptance-envelope"),
    };
    let start = Instant::now();
    let env = resample_around(ck, sample, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let coverage = env.coverage(3.0);
    Outcome::new(
        coverage >= 0.9 && secs < 600.0,
        format!(
            "vae, test sample 0 ({} Nm, vehicle {}): {:.1}% of {} time samples within mean +- 3 std (>= 90%) from {} decodes, {secs:.0} s (< 600 s)",
            sample.labels.torque_nm,
            sample.labels.vehicle_type,
            100.0 * coverage,
            env.mean.len(),
            env.realizations
        ),
    )
}
