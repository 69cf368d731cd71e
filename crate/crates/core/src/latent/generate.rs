use serde::{Deserialize, Serialize};

use super::map::{fit_and_sample_category, knn_inverse_map, Category, LatentMap};
use crate::data::{Checkpoint, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::signal::{griffin_lim, LogMagSpectrogram, TimeSeries};
use crate::vae::{Condition, Encoding, Noise};
use crate::{par, seed};

pub const GL_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub spectrogram: LogMagSpectrogram,
    pub jerk: TimeSeries,
}

/// Griffin-Lim on each spectrogram; item `i` uses the phase seed derived from `(seed, "gl", i)`.
pub fn to_signals(
    specs: &[LogMagSpectrogram],
    seed_: u64,
    iterations: usize,
) -> Result<Vec<TimeSeries>> {
    par::try_map_range(specs.len(), |i| {
        griffin_lim(
            &specs[i],
            iterations,
            seed::derive_indexed(seed_, "gl", i as u64),
        )
    })
}

fn attach(specs: Vec<LogMagSpectrogram>, seed_: u64, iterations: usize) -> Result<Vec<Generated>> {
    let jerks = to_signals(&specs, seed_, iterations)?;
    Ok(specs
        .into_iter()
        .zip(jerks)
        .map(|(spectrogram, jerk)| Generated { spectrogram, jerk })
        .collect())
}

/// Prior samples of any model (conditioned on `torque` for conditional kinds) with their signals.
pub fn generate_signals(
    ckpt: &Checkpoint,
    torque: Option<f64>,
    n: usize,
    seed_: u64,
    iterations: usize,
) -> Result<Vec<Generated>> {
    let specs = match torque {
        Some(t) => ckpt.generate_conditional(t, n, seed_)?,
        None => ckpt.generate_unconditional(n, seed_)?,
    };
    attach(specs, seed_, iterations)
}

/// Category sample in 2D, k-NN lift to latent space, decode, Griffin-Lim.
pub fn generate_from_category(
    ckpt: &Checkpoint,
    map: &LatentMap,
    category: Category,
    n: usize,
    seed_: u64,
    k: usize,
    tau: f64,
    iterations: usize,
) -> Result<Vec<Generated>> {
    if ckpt.model.kind().is_conditional() {
        return Err(Error::Usage(format!(
            "category sampling needs an unconditional model, got {}",
            ckpt.model.kind().label()
        )));
    }
    let points = fit_and_sample_category(map, category, n, seed_)?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let z: Vec<f64> = points
        .iter()
        .map(|&p| knn_inverse_map(p, map, k, tau))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let z = Tensor::new(vec![n, ckpt.model.latent_dim()], z)?;
    let specs = ckpt.to_spectrograms(&ckpt.model.decode(&z, None)?)?;
    attach(specs, seed_, iterations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub samples: usize,
    pub gl_iterations: usize,
    /// Multiplies the reparameterization noise; 0 decodes the posterior mean every time.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            gl_iterations: GL_ITERATIONS,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

/// Per-time-sample statistics of decoded posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub sample_rate: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub original: Vec<f64>,
    /// Griffin-Lim signal of the decoded posterior mean.
    pub reconstruction: Vec<f64>,
    pub realizations: usize,
}

impl Envelope {
    /// Fraction of time samples where the original lies within `mean ± k·std`.
    pub fn coverage(&self, k: f64) -> f64 {
        let inside = self
            .original
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .filter(|(o, (m, s))| (*o - *m).abs() <= k * *s)
            .count();
        inside as f64 / self.original.len().max(1) as f64
    }

    /// CSV `t,mean,std,lower,upper,original,reconstruction` with 3-std bounds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean,std,lower,upper,original,reconstruction\n");
        for i in 0..self.mean.len() {
            let (m, s) = (self.mean[i], self.std[i]);
            out.push_str(&format!(
                "{},{m:?},{s:?},{:?},{:?},{:?},{:?}\n",
                crate::signal::io::format_sig6(i as f64 / self.sample_rate),
                m - 3.0 * s,
                m + 3.0 * s,
                self.original.get(i).copied().unwrap_or(f64::NAN),
                self.reconstruction[i],
            ));
        }
        out
    }
}

/// Draws `z = μ + scale·σ⊙ε` (mixture posteriors pick the component by `π`).
fn posterior_draws(enc: &Encoding, noise: &Noise, scale: f64, n: usize, d: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(n * d);
    for r in 0..n {
        let eps = &noise.eps[r * d..(r + 1) * d];
        let (mu, lv) = match enc {
            Encoding::Gaussian(g) => (&g[0].mu, &g[0].log_var),
            Encoding::Mixture(m) => {
                let g = &m[0];
                let mut k = g.log_pi.len() - 1;
                let mut acc = 0.0;
                for (c, lp) in g.log_pi.iter().enumerate() {
                    acc += lp.exp();
                    if noise.u[r] < acc {
                        k = c;
                        break;
                    }
                }
                (&g.mu[k], &g.log_var[k])
            }
        };
        z.extend((0..d).map(|j| mu[j] + scale * (0.5 * lv[j]).exp() * eps[j]));
    }
    z
}

/// Sign that best aligns `x` with `reference` (Griffin-Lim is blind to a global sign flip).
fn align_sign(x: &mut [f64], reference: &[f64]) {
    let dot: f64 = x.iter().zip(reference).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Encodes one sample, decodes `samples` reparameterized draws through
/// Griffin-Lim and summarizes them per time sample.
pub fn resample_around(
    ckpt: &Checkpoint,
    sample: &LabeledSample,
    config: &EnvelopeConfig,
) -> Result<Envelope> {
    if config.samples == 0 {
        return Err(Error::Parameter(
            "envelope needs at least one realization".into(),
        ));
    }
    let x = ckpt.to_tensor(&[&sample.spectrogram])?;
    let cond1 = if ckpt.model.kind().is_conditional() {
        Some(vec![Condition::new(sample.labels.torque_nm)?.normalized()])
    } else {
        None
    };
    let enc = ckpt.model.encode(&x, cond1.as_deref())?;
    let d = ckpt.model.latent_dim();

    let mean_z = Tensor::new(vec![1, d], enc.means().concat())?;
    let recon_spec = ckpt.to_spectrograms(&ckpt.model.decode(&mean_z, cond1.as_deref())?)?;
    let gl_seed = seed::derive(config.seed, &["envelope"]);
    let mut reconstruction = to_signals(&recon_spec, gl_seed, config.gl_iterations)?
        .remove(0)
        .samples;
    // Griffin-Lim cannot recover the global sign; take the original's.
    align_sign(&mut reconstruction, &sample.jerk.samples);

    let n = config.samples;
    let noise = Noise::draw(
        n,
        d,
        &mut seed::rng(seed::derive(config.seed, &["envelope-noise"])),
    );
    let z = Tensor::new(
        vec![n, d],
        posterior_draws(&enc, &noise, config.noise_scale, n, d),
    )?;
    let cond = cond1.map(|c| vec![c[0]; n]);
    let specs = ckpt.to_spectrograms(&ckpt.model.decode(&z, cond.as_deref())?)?;
    let mut signals = to_signals(&specs, gl_seed, config.gl_iterations)?;

    let len = reconstruction.len();
    let mut mean = vec![0.0; len];
    for s in &mut signals {
        align_sign(&mut s.samples, &sample.jerk.samples);
        for (m, v) in mean.iter_mut().zip(&s.samples) {
            *m += v / n as f64;
        }
    }
    let mut std = vec![0.0; len];
    for s in &signals {
        for ((acc, v), m) in std.iter_mut().zip(&s.samples).zip(&mean) {
            *acc += (v - m).powi(2) / n as f64;
        }
    }
    std.iter_mut().for_each(|v| *v = v.sqrt());
    Ok(Envelope {
        sample_rate: ckpt.stft.sample_rate,
        mean,
        std,
        original: sample.jerk.samples.clone(),
        reconstruction,
        realizations: n,
    })
}
