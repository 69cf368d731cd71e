use jerkgen::nn::{Mode, Tensor};
use jerkgen::seed;
use jerkgen::vae::{
    kl_gaussian_std, log_normal_diag, reparameterize, Architecture, ModelKind, Noise, VaeModel,
    LATENT_DIM,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

fn model(kind: ModelKind, k: usize) -> VaeModel {
    VaeModel::new(Architecture::published(kind, k).unwrap(), 41).unwrap()
}

/// Largest `|total − (recon + kl)|` over batches of several sizes, all kinds, both modes.
fn decomposition_gap(rng: &mut impl Rng) -> (f64, usize) {
    let (mut worst, mut batches) = (0.0f64, 0);
    for kind in [ModelKind::Vae, ModelKind::Cvae, ModelKind::GmmCvae] {
        let mut m = model(kind, 3);
        for n in [1, 2, 5, 32] {
            for mode in [Mode::Train, Mode::Eval] {
                let x = random_tensor(&[n, 1, 17, 39], rng);
                let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let noise = Noise::draw(n, LATENT_DIM, rng);
                let p = m
                    .loss(
                        &x,
                        kind.is_conditional().then_some(&c[..]),
                        &noise,
                        1.0,
                        mode,
                    )
                    .unwrap();
                worst = worst.max((p.total - (p.recon + p.kl)).abs());
                batches += 1;
            }
        }
    }
    (worst, batches)
}

/// Largest relative gap between the closed-form KL and a 10⁵-draw Monte Carlo estimate.
fn kl_monte_carlo(rng: &mut impl Rng) -> f64 {
    let zero = [0.0; LATENT_DIM];
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mu: Vec<f64> = (0..LATENT_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lv: Vec<f64> = (0..LATENT_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let n = 100_000;
        let mut acc = 0.0;
        let mut e = vec![0.0; LATENT_DIM];
        for _ in 0..n {
            e.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let z = reparameterize(&mu, &lv, &e);
            acc += log_normal_diag(&z, &mu, &lv) - log_normal_diag(&z, &zero, &zero);
        }
        let exact = kl_gaussian_std(&mu, &lv);
        worst = worst.max((acc / n as f64 - exact).abs() / exact);
    }
    worst
}

/// A one-component mixture prior against the plain Gaussian prior of the
/// conditional model with the same weights.
fn single_component_gap(rng: &mut impl Rng) -> f64 {
    let mut cvae = model(ModelKind::Cvae, 1);
    let mut gmm = model(ModelKind::GmmCvae, 1);
    let mut worst = 0.0f64;
    for n in [2, 7] {
        let x = random_tensor(&[n, 1, 17, 39], rng);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let noise = Noise::draw(n, LATENT_DIM, rng);
        for mode in [Mode::Train, Mode::Eval] {
            let a = cvae.loss(&x, Some(&c), &noise, 1.0, mode).unwrap();
            let b = gmm.loss(&x, Some(&c), &noise, 1.0, mode).unwrap();
            worst = worst.max((a.total - b.total).abs());
        }
    }
    worst
}

pub fn elbo() -> Outcome {
    let mut rng = seed::rng(4);
    let (gap, batches) = decomposition_gap(&mut rng);
    let mc = kl_monte_carlo(&mut rng);
    let k1 = single_component_gap(&mut rng);
    Outcome::new(
        gap <= 1e-12 && mc < 0.01 && k1 < 1e-8,
        format!(
            "|total - recon - kl| {gap:.1e} over {batches} batches (<= 1e-12); KL vs Monte Carlo worst {:.3}% over 50 posteriors (< 1%); K=1 mixture vs Gaussian prior {k1:.1e} (< 1e-8)",
            100.0 * mc
        ),
    )
}
