//! Exact O(n²) t-SNE.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    /// Clamped to `(n − 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) {
            return Err(Error::Config(format!(
                "perplexity {} must be at least 2",
                self.perplexity
            )));
        }
        if self.iterations < 250 {
            return Err(Error::Config(format!(
                "t-SNE needs at least 250 iterations, got {}",
                self.iterations
            )));
        }
        if self.exaggeration_iterations > self.iterations {
            return Err(Error::Config(
                "exaggeration phase longer than the run".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config(
                "learning_rate must be positive and early_exaggeration at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    pub embedding: Vec<[f64; 2]>,
    /// KL(P‖Q) after each iteration, with exaggeration removed from P.
    pub kl_history: Vec<f64>,
    pub perplexity: f64,
}

const MIN_POINTS: usize = 10;
const PROB_FLOOR: f64 = 1e-12;
const MOMENTUM_SWITCH: usize = 250;

fn sq_dists(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities, bisecting the precision until the
/// entropy matches `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, target_entropy: f64, out: &mut [f64]) {
    let n = out.len();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| d[j])
        .fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            let p = if j == i {
                0.0
            } else {
                (-(d[j] - dmin) * beta).exp()
            };
            out[j] = p;
            sum += p;
            weighted += p * (d[j] - dmin);
        }
        let entropy = sum.ln() + beta * weighted / sum;
        out.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy - target_entropy;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() {
                (beta + hi) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
}

/// Symmetrized joint affinities `P`.
pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let d = sq_dists(x);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        conditional_row(
            &d[i * n..(i + 1) * n],
            i,
            target,
            &mut cond[i * n..(i + 1) * n],
        );
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] =
                    ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(PROB_FLOOR);
            }
        }
    }
    p
}

fn jitter_duplicates(x: &[Vec<f64>], seed_: u64) -> Vec<Vec<f64>> {
    let d = sq_dists(x);
    let n = x.len();
    let dup = (0..n).any(|i| (0..n).any(|j| i != j && d[i * n + j] == 0.0));
    if !dup {
        return x.to_vec();
    }
    log::warn!("t-SNE input has duplicate points; applying jitter");
    let scale = x
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0)
        * 1e-6;
    let mut rng = seed::rng(seed::derive(seed_, &["jitter"]));
    x.iter()
        .map(|r| {
            r.iter()
                .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Embeds the rows of `x` in two dimensions.
pub fn embed_tsne(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneOutput> {
    config.validate()?;
    let n = x.len();
    if n < MIN_POINTS {
        return Err(Error::EmptyDataset(format!(
            "t-SNE needs at least {MIN_POINTS} points, got {n}"
        )));
    }
    let dim = x[0].len();
    if let Some(i) = x
        .iter()
        .position(|r| r.len() != dim || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Domain(format!(
            "t-SNE input row {i} is ragged or not finite"
        )));
    }
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0);
    let x = jitter_duplicates(x, config.seed);
    let p = joint_affinities(&x, perplexity);

    let mut rng = seed::rng(seed::derive(config.seed, &["tsne-init"]));
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                1e-4 * rng.sample::<f64, _>(StandardNormal),
                1e-4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };

        let mut zsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / zsum).max(PROB_FLOOR);
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
                let m = (exaggeration * pij - q) * num[i * n + j];
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                gains[i][k] = if same {
                    gains[i][k] * 0.8
                } else {
                    gains[i][k] + 0.2
                };
                gains[i][k] = gains[i][k].max(0.01);
                velocity[i][k] =
                    momentum * velocity[i][k] - config.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        for p in &mut y {
            p[0] -= mx / n as f64;
            p[1] -= my / n as f64;
        }
        if !kl.is_finite() {
            return Err(Error::Training(format!(
                "t-SNE objective became non-finite at iteration {it}"
            )));
        }
        kl_history.push(kl);
    }
    Ok(TsneOutput {
        embedding: y,
        kl_history,
        perplexity,
    })
}
