use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::RealFft;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub window_kind: WindowKind,
    pub sample_rate: f64,
    pub center_pad: bool,
    pub log_epsilon: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 32,
            hop: 2,
            window_kind: WindowKind::Hann,
            sample_rate: 50.0,
            center_pad: true,
            log_epsilon: 1e-6,
        }
    }
}

/// Signal length that yields the 17 x 39 spectrogram under the default config.
pub const DEFAULT_SIGNAL_LEN: usize = 76;

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.hop == 0 {
            return Err(Error::Config("window_size and hop must be positive".into()));
        }
        if self.hop > self.window_size {
            return Err(Error::Config(format!(
                "hop {} exceeds window_size {}",
                self.hop, self.window_size
            )));
        }
        if self.window_size % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop {} does not divide window_size {} (overlap-add inversion is inexact)",
                self.hop, self.window_size
            )));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::Config("log_epsilon must be positive".into()));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_freqs(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        if self.center_pad {
            self.window_size / 2
        } else {
            0
        }
    }

    /// Frame count for a signal of `len` samples, or `None` if it is too short.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad();
        (padded >= self.window_size).then(|| (padded - self.window_size) / self.hop + 1)
    }

    /// Length of the overlap-add buffer covering `n_frames` frames.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        self.window_size + self.hop * n_frames.saturating_sub(1)
    }

    /// Signal length reconstructed from `n_frames` frames.
    pub fn signal_len(&self, n_frames: usize) -> usize {
        self.padded_len(n_frames).saturating_sub(2 * self.pad())
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.window_size as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Domain(format!("invalid sample rate {sample_rate}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    /// F x T, rows are frequency bins.
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMagSpectrogram {
    /// F x T, rows are frequency bins.
    pub values: Array2<f64>,
    pub config: StftConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub angles: Array2<f64>,
}

impl LogMagSpectrogram {
    pub fn from_magnitude(magnitude: ArrayView2<f64>, config: &StftConfig) -> Result<Self> {
        Ok(Self {
            values: log_scale(magnitude, config.log_epsilon)?,
            config: config.clone(),
        })
    }

    pub fn magnitude(&self) -> Array2<f64> {
        exp_scale(self.values.view(), self.config.log_epsilon)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Reusable STFT machinery for one configuration (window + FFT tables).
#[derive(Debug, Clone)]
pub struct StftPlan {
    config: StftConfig,
    window: Vec<f64>,
    rfft: RealFft,
}

/// Per-thread scratch buffers for [`StftPlan`].
#[derive(Debug, Default)]
pub struct StftScratch {
    frame: Vec<f64>,
    bins: Vec<Complex64>,
    buf: Vec<Complex64>,
    fft: Vec<Complex64>,
    envelope: Vec<f64>,
}

impl StftPlan {
    pub fn new(config: &StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            window: config.window_kind.coefficients(config.window_size),
            rfft: RealFft::new(config.window_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Reflect-pads (if configured) and transforms a signal.
    pub fn stft(&self, signal: &[f64]) -> Result<Array2<Complex64>> {
        let padded = self.pad_signal(signal)?;
        let n_frames = (padded.len() - self.config.window_size) / self.config.hop + 1;
        let mut out = Array2::zeros((self.config.n_freqs(), n_frames));
        self.analyze(&padded, &mut out, &mut StftScratch::default());
        Ok(out)
    }

    pub fn pad_signal(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let w = self.config.window_size;
        if signal.is_empty() {
            return Err(Error::Length("empty signal".into()));
        }
        let pad = self.config.pad();
        if pad > 0 && signal.len() <= pad {
            return Err(Error::Length(format!(
                "signal of {} samples is too short for reflect padding of {pad}",
                signal.len()
            )));
        }
        if signal.len() + 2 * pad < w {
            return Err(Error::Length(format!(
                "signal of {} samples is shorter than one {w}-sample frame",
                signal.len()
            )));
        }
        let n = signal.len();
        let mut padded = Vec::with_capacity(n + 2 * pad);
        padded.extend((1..=pad).rev().map(|i| signal[i]));
        padded.extend_from_slice(signal);
        padded.extend((1..=pad).map(|i| signal[n - 1 - i]));
        Ok(padded)
    }

    /// Frames `buf` (no padding applied) into the columns of `out`.
    pub fn analyze(&self, buf: &[f64], out: &mut Array2<Complex64>, s: &mut StftScratch) {
        let (w, h) = (self.config.window_size, self.config.hop);
        let (nf, nt) = out.dim();
        debug_assert!(buf.len() >= self.config.padded_len(nt));
        s.frame.resize(w, 0.0);
        s.bins.resize(nf, Complex64::default());
        for t in 0..nt {
            let seg = &buf[t * h..t * h + w];
            for ((f, &x), &win) in s.frame.iter_mut().zip(seg).zip(&self.window) {
                *f = x * win;
            }
            self.rfft
                .forward(&s.frame, &mut s.bins, &mut s.buf, &mut s.fft);
            for (f, &b) in s.bins.iter().enumerate() {
                out[[f, t]] = b;
            }
        }
    }

    /// Least-squares overlap-add inverse into a buffer of `padded_len(T)` samples.
    pub fn synthesize(&self, bins: &Array2<Complex64>, out: &mut Vec<f64>, s: &mut StftScratch) {
        let (w, h) = (self.config.window_size, self.config.hop);
        let (nf, nt) = bins.dim();
        let len = self.config.padded_len(nt);
        out.clear();
        out.resize(len, 0.0);
        s.envelope.clear();
        s.envelope.resize(len, 0.0);
        s.frame.resize(w, 0.0);
        s.bins.resize(nf, Complex64::default());
        for t in 0..nt {
            for (f, b) in s.bins.iter_mut().enumerate() {
                *b = bins[[f, t]];
            }
            self.rfft
                .inverse(&s.bins, &mut s.frame, &mut s.buf, &mut s.fft);
            let off = t * h;
            for i in 0..w {
                out[off + i] += s.frame[i] * self.window[i];
                s.envelope[off + i] += self.window[i] * self.window[i];
            }
        }
        for (o, &e) in out.iter_mut().zip(&s.envelope) {
            // samples no window touches carry no information
            *o = if e > 1e-11 { *o / e } else { 0.0 };
        }
    }

    /// Inverse transform with the center padding trimmed off.
    pub fn istft(&self, bins: &Array2<Complex64>) -> Vec<f64> {
        let mut padded = Vec::new();
        self.synthesize(bins, &mut padded, &mut StftScratch::default());
        self.trim(&padded).to_vec()
    }

    pub fn trim<'a>(&self, padded: &'a [f64]) -> &'a [f64] {
        let pad = self.config.pad();
        &padded[pad..padded.len() - pad]
    }
}

pub fn stft(signal: &TimeSeries, config: &StftConfig) -> Result<ComplexSpectrogram> {
    let plan = StftPlan::new(config)?;
    Ok(ComplexSpectrogram {
        bins: plan.stft(&signal.samples)?,
        config: config.clone(),
    })
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<TimeSeries> {
    let plan = StftPlan::new(&spec.config)?;
    TimeSeries::new(plan.istft(&spec.bins), spec.config.sample_rate)
}

/// Splits a complex grid into magnitude and phase; `0 + 0i` has phase 0.
pub fn magnitude_phase(spec: &ComplexSpectrogram) -> (Array2<f64>, PhaseSpectrogram) {
    let magnitude = spec.bins.mapv(|c| c.re.hypot(c.im));
    let angles = spec.bins.mapv(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            0.0
        } else {
            c.im.atan2(c.re)
        }
    });
    (magnitude, PhaseSpectrogram { angles })
}

pub fn recompose(magnitude: ArrayView2<f64>, phase: &PhaseSpectrogram) -> Array2<Complex64> {
    Zip::from(magnitude)
        .and(&phase.angles)
        .map_collect(|&m, &p| Complex64::from_polar(m, p))
}

/// `x = ln(m + ε)`.
pub fn log_scale(magnitude: ArrayView2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "log epsilon must be positive, got {epsilon}"
        )));
    }
    if let Some(((f, t), m)) = magnitude
        .indexed_iter()
        .find(|(_, m)| !(**m >= 0.0) || !m.is_finite())
    {
        return Err(Error::Domain(format!(
            "magnitude at ({f}, {t}) is {m}; must be finite and non-negative"
        )));
    }
    Ok(magnitude.mapv(|m| (m + epsilon).ln()))
}

/// `m = exp(x) − ε`, clamped at zero; values at or below `ln ε` map to exactly 0.
pub fn exp_scale(logmag: ArrayView2<f64>, epsilon: f64) -> Array2<f64> {
    let floor = epsilon.ln();
    logmag.mapv(|x| {
        if x <= floor {
            0.0
        } else {
            (x.exp() - epsilon).max(0.0)
        }
    })
}
