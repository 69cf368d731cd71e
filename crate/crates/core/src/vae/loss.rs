//! ELBO terms: Gaussian reconstruction likelihood, KL divergences and
//! mixture responsibilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Mixture posterior with responsibilities under the current prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmLatent {
    pub log_pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub log_var: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

impl GmmLatent {
    pub fn components(&self) -> usize {
        self.mu.len()
    }

    /// `Σ_k γ_k μ_k`.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.mu[0].len();
        (0..d)
            .map(|i| self.gamma.iter().zip(&self.mu).map(|(g, m)| g * m[i]).sum())
            .collect()
    }
}

/// Per-batch mean loss terms; `total = recon + kl`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn new(recon: f64, kl: f64) -> Self {
        Self {
            total: recon + kl,
            recon,
            kl,
        }
    }
}

/// Gaussian negative log-likelihood with fixed scale `lambda`.
pub fn recon_nll(x: &[f64], x_hat: &[f64], lambda: f64) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::shape("recon_nll", x.len(), x_hat.len()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!(
            "likelihood scale {lambda} must be positive"
        )));
    }
    let sse: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum();
    let l2 = lambda * lambda;
    Ok(sse / (2.0 * l2) + 0.5 * x.len() as f64 * (LN_2PI + l2.ln()))
}

/// `KL(N(μ, σ²) ‖ N(0, I))`.
pub fn kl_gaussian_std(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, l)| l.exp() + m * m - 1.0 - l)
        .sum::<f64>()
}

/// `KL(N(μ, e^ℓ) ‖ N(m, e^r))` for diagonal Gaussians.
pub fn kl_gaussian(mu: &[f64], log_var: &[f64], prior_mu: &[f64], prior_log_var: &[f64]) -> f64 {
    0.5 * (0..mu.len())
        .map(|i| {
            let (l, r) = (log_var[i], prior_log_var[i]);
            r - l + ((l.exp() + (mu[i] - prior_mu[i]).powi(2)) * (-r).exp()) - 1.0
        })
        .sum::<f64>()
}

/// `z = μ + exp(ℓ/2) ⊙ ε`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect()
}

pub fn log_normal_diag(z: &[f64], mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * (0..z.len())
        .map(|i| LN_2PI + log_var[i] + (z[i] - mu[i]).powi(2) * (-log_var[i]).exp())
        .sum::<f64>()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let l = logsumexp(logits);
    logits.iter().map(|x| x - l).collect()
}

/// `γ_k ∝ π_k N(z | μ_k, σ_k²)`, computed in log space; `log_weights` need not be normalized.
pub fn gmm_responsibilities(
    z: &[f64],
    log_weights: &[f64],
    mu: &[Vec<f64>],
    log_var: &[Vec<f64>],
) -> Vec<f64> {
    let a: Vec<f64> = (0..mu.len())
        .map(|k| log_weights[k] + log_normal_diag(z, &mu[k], &log_var[k]))
        .collect();
    let l = logsumexp(&a);
    a.iter().map(|v| (v - l).exp()).collect()
}

/// Per-datum mixture KL recorded on a tape.
///
/// The posterior is `Σ_k γ_k N(μ_k, σ_k²)` with `γ` the responsibilities of
/// the encoder components at the prior-weighted mean `z̄ = Σ_k π_k μ_k`. One
/// sample is drawn: the component by inverse CDF on `u` (no gradient), then
/// `z` by reparameterization. The estimate is `log q(z) − log p(z)`, except
/// that a single component uses the exact Gaussian divergence.
pub(crate) struct MixtureGraph {
    pub tape: Tape,
    pub mu: Vec<Vec<Var>>,
    pub log_var: Vec<Vec<Var>>,
    pub logits: Vec<Var>,
    pub prior_mu: Vec<Vec<Var>>,
    pub prior_log_var: Vec<Vec<Var>>,
    pub z: Vec<Var>,
    pub kl: Var,
}

pub(crate) struct MixtureInputs<'a> {
    pub mu: &'a [Vec<f64>],
    pub log_var: &'a [Vec<f64>],
    pub logits: &'a [f64],
    pub prior_mu: &'a [Vec<f64>],
    pub prior_log_var: &'a [Vec<f64>],
}

fn tape_log_normal(t: &mut Tape, z: &[Var], mu: &[Var], lv: &[Var]) -> Var {
    let terms: Vec<Var> = (0..z.len())
        .map(|i| {
            let d = t.sub(z[i], mu[i]);
            let d2 = t.mul(d, d);
            let neg = t.affine(lv[i], -1.0, 0.0);
            let prec = t.exp(neg);
            let q = t.mul(d2, prec);
            t.add(q, lv[i])
        })
        .collect();
    let s = t.sum(&terms);
    t.affine(s, -0.5, -0.5 * z.len() as f64 * LN_2PI)
}

fn tape_kl_gaussian(t: &mut Tape, mu: &[Var], lv: &[Var], m: &[Var], r: &[Var]) -> Var {
    let terms: Vec<Var> = (0..mu.len())
        .map(|i| {
            let d = t.sub(mu[i], m[i]);
            let d2 = t.mul(d, d);
            let var = t.exp(lv[i]);
            let num = t.add(var, d2);
            let neg_r = t.affine(r[i], -1.0, 0.0);
            let inv = t.exp(neg_r);
            let ratio = t.mul(num, inv);
            let diff = t.sub(r[i], lv[i]);
            t.add(ratio, diff)
        })
        .collect();
    let s = t.sum(&terms);
    t.affine(s, 0.5, -0.5 * mu.len() as f64)
}

pub(crate) fn mixture_graph(inp: &MixtureInputs<'_>, eps: &[f64], u: f64) -> MixtureGraph {
    let k = inp.mu.len();
    let d = eps.len();
    let mut t = Tape::new();
    let leaves = |t: &mut Tape, m: &[Vec<f64>]| -> Vec<Vec<Var>> {
        m.iter()
            .map(|row| row.iter().map(|&v| t.var(v)).collect())
            .collect()
    };
    let mu = leaves(&mut t, inp.mu);
    let log_var = leaves(&mut t, inp.log_var);
    let logits: Vec<Var> = inp.logits.iter().map(|&v| t.var(v)).collect();
    let prior_mu = leaves(&mut t, inp.prior_mu);
    let prior_log_var = leaves(&mut t, inp.prior_log_var);

    let lse_pi = t.logsumexp(&logits);
    let log_pi: Vec<Var> = logits.iter().map(|&a| t.sub(a, lse_pi)).collect();
    let pi: Vec<Var> = log_pi.iter().map(|&l| t.exp(l)).collect();
    let z_bar: Vec<Var> = (0..d)
        .map(|i| {
            let terms: Vec<Var> = (0..k).map(|c| t.mul(pi[c], mu[c][i])).collect();
            t.sum(&terms)
        })
        .collect();
    let a: Vec<Var> = (0..k)
        .map(|c| {
            let ln = tape_log_normal(&mut t, &z_bar, &mu[c], &log_var[c]);
            t.add(log_pi[c], ln)
        })
        .collect();
    let lse_a = t.logsumexp(&a);
    let log_gamma: Vec<Var> = a.iter().map(|&v| t.sub(v, lse_a)).collect();
    let gamma: Vec<f64> = log_gamma.iter().map(|&v| t.value(v).exp()).collect();

    let mut comp = k - 1;
    let mut acc = 0.0;
    for (c, g) in gamma.iter().enumerate() {
        acc += g;
        if u < acc {
            comp = c;
            break;
        }
    }
    let z: Vec<Var> = (0..d)
        .map(|i| {
            let half = t.affine(log_var[comp][i], 0.5, 0.0);
            let sd = t.exp(half);
            let noise = t.affine(sd, eps[i], 0.0);
            t.add(mu[comp][i], noise)
        })
        .collect();
    if k == 1 {
        let kl = tape_kl_gaussian(&mut t, &mu[0], &log_var[0], &prior_mu[0], &prior_log_var[0]);
        return MixtureGraph {
            tape: t,
            mu,
            log_var,
            logits,
            prior_mu,
            prior_log_var,
            z,
            kl,
        };
    }
    let q_terms: Vec<Var> = (0..k)
        .map(|c| {
            let ln = tape_log_normal(&mut t, &z, &mu[c], &log_var[c]);
            t.add(log_gamma[c], ln)
        })
        .collect();
    let log_q = t.logsumexp(&q_terms);
    let p_terms: Vec<Var> = (0..k)
        .map(|c| {
            let ln = tape_log_normal(&mut t, &z, &prior_mu[c], &prior_log_var[c]);
            t.add(log_pi[c], ln)
        })
        .collect();
    let log_p = t.logsumexp(&p_terms);
    let kl = t.sub(log_q, log_p);
    MixtureGraph {
        tape: t,
        mu,
        log_var,
        logits,
        prior_mu,
        prior_log_var,
        z,
        kl,
    }
}

/// One draw of the mixture KL estimate; returns `(z, kl)`.
pub fn gmm_kl_sample(
    q_mu: &[Vec<f64>],
    q_log_var: &[Vec<f64>],
    prior_logits: &[f64],
    prior_mu: &[Vec<f64>],
    prior_log_var: &[Vec<f64>],
    eps: &[f64],
    u: f64,
) -> (Vec<f64>, f64) {
    let g = mixture_graph(
        &MixtureInputs {
            mu: q_mu,
            log_var: q_log_var,
            logits: prior_logits,
            prior_mu,
            prior_log_var,
        },
        eps,
        u,
    );
    (
        g.z.iter().map(|&v| g.tape.value(v)).collect(),
        g.tape.value(g.kl),
    )
}
