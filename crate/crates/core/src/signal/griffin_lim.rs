//! Griffin-Lim phase retrieval.
//!
//! The iteration runs on the padded overlap-add buffer and only trims the
//! center padding once at the end, so every step is an exact orthogonal
//! projection and the classic update cannot increase the spectral-convergence
//! error. Errors are measured over the full two-sided spectrum (interior bins
//! count twice), which is the norm the least-squares inverse projects in.
//!
//! With momentum (fast Griffin-Lim) an extrapolated step is kept only if it
//! does not raise the error; otherwise that iteration falls back to the
//! classic step from the last accepted iterate and the momentum restarts.
//! The reported error sequence is therefore non-increasing in both modes.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::stft::{LogMagSpectrogram, StftPlan, StftScratch, TimeSeries};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GriffinLimConfig {
    pub iterations: usize,
    /// Fast Griffin-Lim momentum; 0 gives the classic update.
    pub momentum: f64,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub signal: TimeSeries,
    /// Spectral-convergence error of each iterate, in order.
    pub errors: Vec<f64>,
}

impl GriffinLimOutput {
    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(0.0)
    }
}

/// Reconstructs a signal from a log-magnitude spectrogram.
pub fn griffin_lim(logmag: &LogMagSpectrogram, iterations: usize, seed: u64) -> Result<TimeSeries> {
    let cfg = GriffinLimConfig {
        iterations,
        ..GriffinLimConfig::default()
    };
    Ok(griffin_lim_traced(logmag, &cfg, seed)?.signal)
}

pub fn griffin_lim_traced(
    logmag: &LogMagSpectrogram,
    config: &GriffinLimConfig,
    seed: u64,
) -> Result<GriffinLimOutput> {
    let plan = StftPlan::new(&logmag.config)?;
    reconstruct_magnitude(&plan, &logmag.magnitude(), config, seed)
}

/// Griffin-Lim on a linear magnitude grid.
pub fn reconstruct_magnitude(
    plan: &StftPlan,
    magnitude: &Array2<f64>,
    config: &GriffinLimConfig,
    seed: u64,
) -> Result<GriffinLimOutput> {
    if config.iterations == 0 {
        return Err(Error::Config(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.momentum) {
        return Err(Error::Config(format!(
            "momentum {} outside [0, 1)",
            config.momentum
        )));
    }
    let cfg = plan.config();
    let (nf, nt) = magnitude.dim();
    if nf != cfg.n_freqs() {
        return Err(Error::shape("griffin_lim", cfg.n_freqs(), nf));
    }
    if nt == 0 {
        return Err(Error::Length("spectrogram has no frames".into()));
    }
    if magnitude.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::Domain(
            "magnitude must be finite and non-negative".into(),
        ));
    }
    let sample_rate = cfg.sample_rate;
    let out_len = cfg.signal_len(nt);
    let weights = bin_weights(nf, cfg.window_size);
    let target_norm = weighted_norm(magnitude.iter().copied(), &weights, nt);
    if target_norm == 0.0 {
        return Ok(GriffinLimOutput {
            signal: TimeSeries::new(vec![0.0; out_len], sample_rate)?,
            errors: vec![0.0; config.iterations],
        });
    }

    let mut rng = seed::rng(seed);
    let phases = magnitude.mapv(|_| rng.random_range(-PI..PI));
    let mut ws = Workspace {
        plan,
        magnitude,
        weights: &weights,
        target_norm,
        padded: Vec::new(),
        scratch: StftScratch::default(),
    };
    // `accepted` is the latest consistent spectrogram, `push` the point the
    // next magnitude projection starts from.
    let mut push = Zip::from(magnitude)
        .and(&phases)
        .map_collect(|&m, &p| Complex64::from_polar(m, p));
    let mut accepted = Array2::<Complex64>::zeros((nf, nt));
    let mut candidate = Array2::<Complex64>::zeros((nf, nt));
    let mut accepted_err = f64::INFINITY;
    let mut errors = Vec::with_capacity(config.iterations);
    let mut signal = Vec::new();
    let alpha = config.momentum;

    for _ in 0..config.iterations {
        let mut err = ws.step(&push, &mut candidate);
        if err > accepted_err {
            // momentum overshot: fall back to the plain projection step
            err = ws.step(&accepted, &mut candidate);
            push.assign(&candidate);
        } else if alpha > 0.0 {
            Zip::from(&mut push)
                .and(&candidate)
                .and(&accepted)
                .for_each(|p, &c, &a| *p = c + (c - a) * alpha);
        } else {
            push.assign(&candidate);
        }
        if err > accepted_err {
            // rounding-level rise at a fixed point; stay put
            errors.push(accepted_err);
            continue;
        }
        std::mem::swap(&mut accepted, &mut candidate);
        signal.clone_from(&ws.padded);
        accepted_err = err;
        errors.push(err);
    }

    let signal = plan.trim(&signal).to_vec();
    Ok(GriffinLimOutput {
        signal: TimeSeries::new(signal, sample_rate)?,
        errors,
    })
}

struct Workspace<'a> {
    plan: &'a StftPlan,
    magnitude: &'a Array2<f64>,
    weights: &'a [f64],
    target_norm: f64,
    padded: Vec<f64>,
    scratch: StftScratch,
}

impl Workspace<'_> {
    /// Magnitude projection of `from`, then consistency projection into `out`;
    /// returns the spectral-convergence error of `out`.
    fn step(&mut self, from: &Array2<Complex64>, out: &mut Array2<Complex64>) -> f64 {
        self.synthesize_projected(from);
        self.plan.analyze(&self.padded, out, &mut self.scratch);
        let nt = out.ncols();
        let diff = Zip::from(&*out)
            .and(self.magnitude)
            .map_collect(|s, &m| s.norm() - m);
        weighted_norm(diff.iter().copied(), self.weights, nt) / self.target_norm
    }

    /// Least-squares signal of the magnitude projection of `from` into `padded`.
    fn synthesize_projected(&mut self, from: &Array2<Complex64>) {
        let projected = Zip::from(from).and(self.magnitude).map_collect(|&s, &m| {
            let n = s.norm();
            if n > 0.0 {
                s * (m / n)
            } else {
                Complex64::new(m, 0.0)
            }
        });
        self.plan
            .synthesize(&projected, &mut self.padded, &mut self.scratch);
    }
}

/// Multiplicity of each one-sided bin in the full spectrum.
fn bin_weights(nf: usize, window: usize) -> Vec<f64> {
    (0..nf)
        .map(|f| {
            if f == 0 || (window % 2 == 0 && f == nf - 1) {
                1.0
            } else {
                2.0
            }
        })
        .collect()
}

fn weighted_norm(values: impl Iterator<Item = f64>, weights: &[f64], nt: usize) -> f64 {
    values
        .enumerate()
        .map(|(i, v)| weights[i / nt] * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Spectral-convergence error of `signal` against a target magnitude, with the
/// same padding conventions as the forward transform.
pub fn spectral_convergence(
    plan: &StftPlan,
    signal: &[f64],
    magnitude: &Array2<f64>,
) -> Result<f64> {
    let spec = plan.stft(signal)?;
    if spec.dim() != magnitude.dim() {
        return Err(Error::shape(
            "spectral_convergence",
            magnitude.dim(),
            spec.dim(),
        ));
    }
    let (nf, nt) = magnitude.dim();
    let weights = bin_weights(nf, plan.config().window_size);
    let denom = weighted_norm(magnitude.iter().copied(), &weights, nt);
    let diff = Zip::from(&spec)
        .and(magnitude)
        .map_collect(|s, &m| s.norm() - m);
    let num = weighted_norm(diff.iter().copied(), &weights, nt);
    Ok(if denom == 0.0 { num } else { num / denom })
}
