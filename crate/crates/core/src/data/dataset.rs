use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::container;
use crate::drivetrain::{torque_bin, RawSignal};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::signal::{magnitude_phase, LogMagSpectrogram, StftConfig, StftPlan, TimeSeries};
use crate::stationarity::{filter_stationary, FilterReport};
use crate::vae::{Condition, TrainData};
use crate::{par, seed};

pub const VAL_FRACTION: f64 = 0.2;
pub const TEST_FRACTION: f64 = 0.1;
const CACHE_KIND: &str = "dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLabels {
    pub torque_nm: f64,
    pub rpm: f64,
    pub vehicle_type: usize,
    pub torque_bin: usize,
    pub seed: u64,
    /// Position in the ingested signal set.
    pub source_index: usize,
}

/// One kept signal: raw (un-normalized) log spectrogram, its jerk signal and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub labels: SampleLabels,
    pub split: Split,
    pub spectrogram: LogMagSpectrogram,
    pub jerk: TimeSeries,
}

/// Z-score statistics over all training-split pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit<'a>(grids: impl Iterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut all = Vec::new();
        for g in grids {
            n += g.len();
            sum += g.iter().sum::<f64>();
            all.push(g);
        }
        if n == 0 {
            return Err(Error::EmptyDataset("no training pixels".into()));
        }
        let mean = sum / n as f64;
        let var = all
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        if !(var > 0.0) {
            return Err(Error::Degenerate(
                "training pixels have zero variance".into(),
            ));
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
    pub normalization: Normalization,
    pub stft: StftConfig,
    pub split_seed: u64,
}

/// Split sizes for `n` samples: val and test rounded to nearest, train takes the rest.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = (VAL_FRACTION * n as f64).round() as usize;
    let test = (TEST_FRACTION * n as f64).round() as usize;
    (n - val - test, val, test)
}

/// ADF gate, STFT, log scale, seeded split and train-split normalization.
pub fn prepare(
    raw: &[RawSignal],
    stft: &StftConfig,
    split_seed: u64,
) -> Result<(LabeledDataset, FilterReport)> {
    if raw.is_empty() {
        return Err(Error::EmptyDataset("no signals to prepare".into()));
    }
    let series: Vec<TimeSeries> = raw.iter().map(|r| r.jerk.clone()).collect();
    let (_, report) = filter_stationary(&series, 0)?;
    let kept = report.kept_ids();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(
            "every signal failed the stationarity gate".into(),
        ));
    }
    let len = raw[kept[0]].jerk.len();
    if let Some(&i) = kept.iter().find(|&&i| raw[i].jerk.len() != len) {
        return Err(Error::Length(format!(
            "signal {i} has {} samples, expected {len} like the others",
            raw[i].jerk.len()
        )));
    }

    let plan = StftPlan::new(stft)?;
    let spectrograms = par::try_map_range(kept.len(), |j| {
        let bins = plan.stft(&raw[kept[j]].jerk.samples)?;
        let (mag, _) = magnitude_phase(&crate::signal::ComplexSpectrogram {
            bins,
            config: stft.clone(),
        });
        LogMagSpectrogram::from_magnitude(mag.view(), stft)
    })?;

    let (n_train, n_val, _) = split_counts(kept.len());
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(split_seed, &["split"])));
    let mut splits = vec![Split::Test; kept.len()];
    for (rank, &j) in order.iter().enumerate() {
        splits[j] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let samples: Vec<LabeledSample> = kept
        .iter()
        .zip(spectrograms)
        .zip(splits)
        .map(|((&i, spectrogram), split)| {
            let r = &raw[i];
            LabeledSample {
                labels: SampleLabels {
                    torque_nm: r.torque_nm,
                    rpm: r.rpm,
                    vehicle_type: r.vehicle_type,
                    torque_bin: r.torque_bin,
                    seed: r.seed,
                    source_index: i,
                },
                split,
                spectrogram,
                jerk: r.jerk.clone(),
            }
        })
        .collect();
    let normalization = Normalization::fit(
        samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.spectrogram.values.as_slice().expect("standard layout")),
    )?;
    let ds = LabeledDataset {
        samples,
        normalization,
        stft: stft.clone(),
        split_seed,
    };
    ds.check_labels()?;
    Ok((ds, report))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheHeader {
    stft: StftConfig,
    normalization: Normalization,
    split_seed: u64,
    n_freqs: usize,
    n_frames: usize,
    signal_len: usize,
    samples: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheEntry {
    labels: SampleLabels,
    split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn spectrogram_shape(&self) -> (usize, usize) {
        self.samples
            .first()
            .map_or((0, 0), |s| s.spectrogram.shape())
    }

    /// Normalized spectrograms of `idx` as an `N × 1 × F × T` tensor.
    pub fn tensor(&self, idx: &[usize]) -> Result<Tensor> {
        let (f, t) = self.spectrogram_shape();
        let mut data = Vec::with_capacity(idx.len() * f * t);
        for &i in idx {
            data.extend(
                self.samples[i]
                    .spectrogram
                    .values
                    .iter()
                    .map(|&v| self.normalization.normalize(v)),
            );
        }
        Tensor::new(vec![idx.len(), 1, f, t], data)
    }

    /// Network-scale torque conditions of `idx`.
    pub fn conditions(&self, idx: &[usize]) -> Result<Vec<f64>> {
        idx.iter()
            .map(|&i| Condition::new(self.samples[i].labels.torque_nm).map(Condition::normalized))
            .collect()
    }

    pub fn train_data(&self) -> Result<TrainData> {
        let tr = self.indices(Split::Train);
        let va = self.indices(Split::Val);
        Ok(TrainData {
            train_x: self.tensor(&tr)?,
            train_cond: self.conditions(&tr)?,
            val_x: self.tensor(&va)?,
            val_cond: self.conditions(&va)?,
        })
    }

    /// Every stored torque bin must agree with its torque.
    pub fn check_labels(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            let b = torque_bin(s.labels.torque_nm);
            if b != s.labels.torque_bin {
                return Err(Error::Integrity {
                    path: format!("sample {i}").into(),
                    reason: format!(
                        "torque bin {} but {} Nm falls in bin {b}",
                        s.labels.torque_bin, s.labels.torque_nm
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (n_freqs, n_frames) = self.spectrogram_shape();
        let signal_len = self.samples.first().map_or(0, |s| s.jerk.len());
        let header = CacheHeader {
            stft: self.stft.clone(),
            normalization: self.normalization,
            split_seed: self.split_seed,
            n_freqs,
            n_frames,
            signal_len,
            samples: self
                .samples
                .iter()
                .map(|s| CacheEntry {
                    labels: s.labels,
                    split: s.split,
                })
                .collect(),
        };
        let mut blob = Vec::with_capacity(self.len() * (n_freqs * n_frames + signal_len));
        for s in &self.samples {
            blob.extend(s.spectrogram.values.iter());
            blob.extend(&s.jerk.samples);
        }
        container::save(path, CACHE_KIND, &header, &blob)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, blob): (CacheHeader, Vec<f64>) = container::load(path, CACHE_KIND)?;
        h.stft.validate()?;
        let per = h.n_freqs * h.n_frames + h.signal_len;
        if blob.len() != per * h.samples.len() {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                reason: format!(
                    "{} values for {} samples of {per}",
                    blob.len(),
                    h.samples.len()
                ),
            });
        }
        let samples = h
            .samples
            .into_iter()
            .zip(blob.chunks_exact(per.max(1)))
            .map(|(e, chunk)| {
                let (spec, sig) = chunk.split_at(h.n_freqs * h.n_frames);
                Ok(LabeledSample {
                    labels: e.labels,
                    split: e.split,
                    spectrogram: LogMagSpectrogram {
                        values: ndarray::Array2::from_shape_vec(
                            (h.n_freqs, h.n_frames),
                            spec.to_vec(),
                        )
                        .map_err(|e| Error::Integrity {
                            path: path.to_path_buf(),
                            reason: e.to_string(),
                        })?,
                        config: h.stft.clone(),
                    },
                    jerk: TimeSeries::new(sig.to_vec(), h.stft.sample_rate)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            samples,
            normalization: h.normalization,
            stft: h.stft,
            split_seed: h.split_seed,
        };
        ds.check_labels()?;
        Ok(ds)
    }
}
