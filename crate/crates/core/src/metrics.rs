//! Reconstruction metrics and the evaluation report.
//!
//! Aggregation: every per-pair quantity is a mean over that pair's pixels,
//! and batch values are means over pairs. Dataset statistics (mean,
//! variance, mean absolute deviation, maximum and range) are taken over all
//! original pixels. SSIM uses one global window per pair.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::data::{Checkpoint, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::par;

pub const AGGREGATION: &str =
    "per-pair pixel means, averaged over pairs; global single-window SSIM";

fn check_pairs(x: &[&[f64]], y: &[&[f64]]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyDataset("no pairs to compare".into()));
    }
    if x.len() != y.len() {
        return Err(Error::shape("metric batch", x.len(), y.len()));
    }
    let n = x[0].len();
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        if a.len() != n || b.len() != n || n == 0 {
            return Err(Error::shape(
                format!("metric pair {i}"),
                n,
                (a.len(), b.len()),
            ));
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pair_mean(x: &[&[f64]], y: &[&[f64]], f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    check_pairs(x, y)?;
    let per: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a.iter().zip(*b).map(|(&p, &q)| f(p, q)).sum::<f64>() / a.len() as f64)
        .collect();
    Ok(mean(&per))
}

pub fn mse(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    pair_mean(x, y, |p, q| (p - q) * (p - q))
}

pub fn mae(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    pair_mean(x, y, |p, q| (p - q).abs())
}

/// Statistics of the original batch that the normalized metrics depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub variance: f64,
    pub mean_abs_deviation: f64,
    pub max: f64,
    pub data_range: f64,
    pub signal_power: f64,
}

impl DatasetStats {
    pub fn of(x: &[&[f64]]) -> Result<Self> {
        let n: usize = x.iter().map(|a| a.len()).sum();
        if n == 0 {
            return Err(Error::EmptyDataset("no original pixels".into()));
        }
        let all = || x.iter().flat_map(|a| a.iter().copied());
        let mean = all().sum::<f64>() / n as f64;
        let variance = all().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let mean_abs_deviation = all().map(|v| (v - mean).abs()).sum::<f64>() / n as f64;
        let max = all().fold(f64::NEG_INFINITY, f64::max);
        let min = all().fold(f64::INFINITY, f64::min);
        let signal_power = all().map(|v| v * v).sum::<f64>() / n as f64;
        Ok(Self {
            mean,
            variance,
            mean_abs_deviation,
            max,
            data_range: max - min,
            signal_power,
        })
    }
}

pub fn nmse(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let s = DatasetStats::of(x)?;
    if !(s.variance > 0.0) {
        return Err(Error::Degenerate("originals have zero variance".into()));
    }
    Ok(mse(x, y)? / s.variance)
}

pub fn nmae(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let s = DatasetStats::of(x)?;
    if !(s.mean_abs_deviation > 0.0) {
        return Err(Error::Degenerate(
            "originals have zero mean absolute deviation".into(),
        ));
    }
    Ok(mae(x, y)? / s.mean_abs_deviation)
}

/// Stabilizing constants `((0.01 L)², (0.03 L)²)` for data range `L`.
pub fn ssim_constants(data_range: f64) -> (f64, f64) {
    ((0.01 * data_range).powi(2), (0.03 * data_range).powi(2))
}

/// Global SSIM of one pair.
pub fn ssim_pair(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let n = a.len() as f64;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    let cov = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p - ma) * (q - mb))
        .sum::<f64>()
        / n;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean global SSIM over pairs, constants from the originals' data range.
pub fn ssim(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    check_pairs(x, y)?;
    let (c1, c2) = ssim_constants(DatasetStats::of(x)?.data_range);
    ssim_with(x, y, c1, c2)
}

pub fn ssim_with(x: &[&[f64]], y: &[&[f64]], c1: f64, c2: f64) -> Result<f64> {
    check_pairs(x, y)?;
    Ok(mean(
        &x.iter()
            .zip(y)
            .map(|(a, b)| ssim_pair(a, b, c1, c2))
            .collect::<Vec<_>>(),
    ))
}

fn db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// `10 log10(mean X² / mean (X − X̂)²)`; `+∞` for a perfect reconstruction.
pub fn snr_db(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let err = mse(x, y)?;
    Ok(db(DatasetStats::of(x)?.signal_power, err))
}

/// `10 log10(MAX² / MSE)` with `MAX` the largest original pixel; `+∞` for a perfect reconstruction.
pub fn psnr_db(x: &[&[f64]], y: &[&[f64]]) -> Result<f64> {
    let err = mse(x, y)?;
    let max = DatasetStats::of(x)?.max;
    Ok(db(max * max, err))
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub nmse: f64,
    pub nmae: f64,
    pub ssim: f64,
    #[serde(serialize_with = "ser_db")]
    pub snr_db: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub model: String,
    pub aggregation: String,
    pub n_pairs: usize,
    pub stats: DatasetStats,
    pub average: Metrics,
    pub per_pair: Vec<Metrics>,
}

impl MetricReport {
    pub fn compute(model: &str, x: &[&[f64]], y: &[&[f64]]) -> Result<Self> {
        check_pairs(x, y)?;
        let stats = DatasetStats::of(x)?;
        if !(stats.variance > 0.0) || !(stats.mean_abs_deviation > 0.0) {
            return Err(Error::Degenerate("originals are constant".into()));
        }
        let (c1, c2) = ssim_constants(stats.data_range);
        let per_pair = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e =
                    a.iter().zip(*b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64;
                let m = a.iter().zip(*b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64;
                let power = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
                Metrics {
                    mse: e,
                    mae: m,
                    nmse: e / stats.variance,
                    nmae: m / stats.mean_abs_deviation,
                    ssim: ssim_pair(a, b, c1, c2),
                    snr_db: db(power, e),
                    psnr_db: db(stats.max * stats.max, e),
                }
            })
            .collect();
        let e = mse(x, y)?;
        let m = mae(x, y)?;
        let average = Metrics {
            mse: e,
            mae: m,
            nmse: e / stats.variance,
            nmae: m / stats.mean_abs_deviation,
            ssim: ssim_with(x, y, c1, c2)?,
            snr_db: db(stats.signal_power, e),
            psnr_db: db(stats.max * stats.max, e),
        };
        Ok(Self {
            model: model.to_string(),
            aggregation: AGGREGATION.to_string(),
            n_pairs: x.len(),
            stats,
            average,
            per_pair,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("metric report", e))
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".into()
    }
}

/// Aligned table with one column per report, rows in the usual order.
pub fn metrics_table(reports: &[&MetricReport]) -> String {
    let rows: [(&str, fn(&Metrics) -> f64); 7] = [
        ("Average MSE", |m| m.mse),
        ("Average MAE", |m| m.mae),
        ("Normalized MSE", |m| m.nmse),
        ("Normalized MAE", |m| m.nmae),
        ("Average SSIM", |m| m.ssim),
        ("Average SNR (dB)", |m| m.snr_db),
        ("Average PSNR (dB)", |m| m.psnr_db),
    ];
    let mut out = String::new();
    let _ = write!(out, "{:<20}", "Metric");
    for r in reports {
        let _ = write!(out, " | {:>10}", r.model.to_uppercase());
    }
    out.push('\n');
    out.push_str(&"-".repeat(20 + 13 * reports.len()));
    out.push('\n');
    for (name, f) in rows {
        let _ = write!(out, "{name:<20}");
        for r in reports {
            let _ = write!(out, " | {:>10}", fmt_metric(f(&r.average)));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "({AGGREGATION})");
    out
}

/// Reconstructs every sample of `split` from its posterior mean and scores it
/// in normalized spectrogram space.
pub fn evaluate_suite(
    ckpt: &Checkpoint,
    dataset: &LabeledDataset,
    split: Split,
) -> Result<MetricReport> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(Error::EmptyDataset(format!("{split:?} split is empty")));
    }
    let x = dataset.tensor(&idx)?;
    let cond = if ckpt.model.kind().is_conditional() {
        Some(dataset.conditions(&idx)?)
    } else {
        None
    };
    let y = ckpt.model.reconstruct(&x, cond.as_deref())?;
    let xs: Vec<&[f64]> = (0..idx.len()).map(|i| x.item(i)).collect();
    let ys: Vec<&[f64]> = (0..idx.len()).map(|i| y.item(i)).collect();
    MetricReport::compute(ckpt.model.kind().label(), &xs, &ys)
}

/// Mean silhouette coefficient of `points` under integer `labels` (Euclidean).
/// Points in singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::shape(
            "silhouette labels",
            points.len(),
            labels.len(),
        ));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let scores = par::map_range(points.len(), |i| {
        let mut sum = vec![0.0; classes.len()];
        let mut cnt = vec![0usize; classes.len()];
        for (j, p) in points.iter().enumerate() {
            if j != i {
                let c = classes.binary_search(&labels[j]).expect("known label");
                sum[c] += dist(&points[i], p);
                cnt[c] += 1;
            }
        }
        let own = classes.binary_search(&labels[i]).expect("known label");
        if cnt[own] == 0 {
            return 0.0;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(mean(&scores))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::shape("spearman", x.len(), y.len()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate("spearman of a constant sequence".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}
