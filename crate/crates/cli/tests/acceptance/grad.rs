//! Backprop against central differences, on two-sample batches throughout.

use std::time::Instant;

use jerkgen::nn::{Layer, LayerSpec, Mode, Tensor};
use jerkgen::seed;
use jerkgen::vae::{Architecture, ModelKind, Noise, VaeModel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error over input, auxiliary and parameter gradients of
/// `Σ g·layer(x, aux)`, every coordinate perturbed.
fn layer_error(
    spec: LayerSpec,
    in_shape: &[usize],
    aux_shape: Option<&[usize]>,
    mode: Mode,
    seed_: u64,
) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut layer = Layer::new(spec, "l", &mut rng).unwrap();
    // move batch-norm terms and running statistics away from the identity
    for p in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
        if p.name.ends_with("gamma") || p.name.ends_with("running_var") {
            p.value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if p.name.ends_with("beta")
            || p.name.ends_with("running_mean")
            || p.name.ends_with("bias")
        {
            p.value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let x = random_tensor(in_shape, &mut rng);
    let aux = aux_shape.map(|s| random_tensor(s, &mut rng));
    let (y, cache) = layer.forward(&x, aux.as_ref(), mode).unwrap();
    let g = random_tensor(y.shape(), &mut rng);
    let (dx, daux) = layer.backward(&cache, &g).unwrap();

    let probe = |layer: &mut Layer, x: &Tensor, aux: Option<&Tensor>| {
        dot(layer.forward(x, aux, mode).unwrap().0.data(), g.data())
    };
    let mut worst = 0.0f64;

    let num_dx: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += STEP;
            let fp = probe(&mut layer, &xp, aux.as_ref());
            xp.data_mut()[i] -= 2.0 * STEP;
            let fm = probe(&mut layer, &xp, aux.as_ref());
            (fp - fm) / (2.0 * STEP)
        })
        .collect();
    worst = worst.max(rel_err(dx.data(), &num_dx));

    if let (Some(a), Some(da)) = (&aux, &daux) {
        let num: Vec<f64> = (0..a.len())
            .map(|i| {
                let mut ap = a.clone();
                ap.data_mut()[i] += STEP;
                let fp = probe(&mut layer, &x, Some(&ap));
                ap.data_mut()[i] -= 2.0 * STEP;
                let fm = probe(&mut layer, &x, Some(&ap));
                (fp - fm) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(rel_err(da.data(), &num));
    }

    for pi in 0..layer.params.len() {
        let analytic = layer.params[pi].grad.clone();
        let num: Vec<f64> = (0..analytic.len())
            .map(|j| {
                layer.params[pi].value[j] += STEP;
                let fp = probe(&mut layer, &x, aux.as_ref());
                layer.params[pi].value[j] -= 2.0 * STEP;
                let fm = probe(&mut layer, &x, aux.as_ref());
                layer.params[pi].value[j] += STEP;
                (fp - fm) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &num));
    }
    worst
}

/// Relative error of backprop against a central difference of the full
/// batch loss along a random unit direction in parameter space.
fn loss_error(kind: ModelKind, seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut m = VaeModel::new(Architecture::published(kind, 3).unwrap(), seed_).unwrap();
    let x = random_tensor(&[2, 1, 17, 39], &mut rng);
    let c = [0.2, 0.9];
    let cond = kind.is_conditional().then_some(&c[..]);
    let noise = Noise::draw(2, m.latent_dim(), &mut rng);
    m.zero_grad();
    m.loss(&x, cond, &noise, 1.0, Mode::Train).unwrap();
    let mut dirs: Vec<Vec<f64>> = m
        .params()
        .iter()
        .map(|p| {
            (0..p.value.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let norm = dirs.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    dirs.iter_mut().flatten().for_each(|v| *v /= norm);
    let analytic: f64 = m
        .params()
        .iter()
        .zip(&dirs)
        .map(|(p, d)| dot(&p.grad, d))
        .sum();
    let shift = |m: &mut VaeModel, step: f64| {
        for (p, d) in m.params_mut().into_iter().zip(&dirs) {
            p.value.iter_mut().zip(d).for_each(|(w, v)| *w += step * v);
        }
        m.loss(&x, cond, &noise, 1.0, Mode::Train).unwrap().total
    };
    let fp = shift(&mut m, STEP);
    let fm = shift(&mut m, -2.0 * STEP);
    let numeric = (fp - fm) / (2.0 * STEP);
    ((analytic - numeric) / numeric.abs().max(analytic.abs())).abs()
}

pub fn gradients() -> Outcome {
    let start = Instant::now();
    let layers: Vec<(&str, LayerSpec, Vec<usize>, Option<Vec<usize>>, Mode)> = vec![
        (
            "conv3x3",
            LayerSpec::Conv2dSame {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
            },
            vec![2, 2, 5, 4],
            None,
            Mode::Train,
        ),
        (
            "conv1x1",
            LayerSpec::Conv2dSame {
                in_channels: 3,
                out_channels: 2,
                kernel: 1,
            },
            vec![2, 3, 3, 4],
            None,
            Mode::Train,
        ),
        ("relu", LayerSpec::Relu, vec![2, 7], None, Mode::Train),
        (
            "batchnorm-train",
            LayerSpec::Batchnorm2d { channels: 3 },
            vec![2, 3, 2, 3],
            None,
            Mode::Train,
        ),
        (
            "batchnorm-eval",
            LayerSpec::Batchnorm2d { channels: 2 },
            vec![2, 2, 3, 3],
            None,
            Mode::Eval,
        ),
        (
            "maxpool",
            LayerSpec::Maxpool2,
            vec![2, 2, 5, 7],
            None,
            Mode::Train,
        ),
        (
            "linear",
            LayerSpec::Linear {
                in_features: 5,
                out_features: 4,
            },
            vec![2, 5],
            None,
            Mode::Train,
        ),
        (
            "upsample",
            LayerSpec::UpsampleNearest2,
            vec![2, 2, 2, 3],
            None,
            Mode::Train,
        ),
        (
            "resize-up",
            LayerSpec::ResizeBilinear {
                height: 7,
                width: 9,
            },
            vec![2, 2, 4, 4],
            None,
            Mode::Train,
        ),
        (
            "resize-down",
            LayerSpec::ResizeBilinear {
                height: 3,
                width: 2,
            },
            vec![2, 1, 5, 6],
            None,
            Mode::Train,
        ),
        (
            "flatten",
            LayerSpec::Flatten,
            vec![2, 2, 2, 3],
            None,
            Mode::Train,
        ),
        (
            "unflatten",
            LayerSpec::Unflatten {
                channels: 2,
                height: 1,
                width: 3,
            },
            vec![2, 6],
            None,
            Mode::Train,
        ),
        (
            "concat-channel",
            LayerSpec::ConcatChannel { channels: 1 },
            vec![2, 2, 3, 3],
            Some(vec![2, 1, 3, 3]),
            Mode::Train,
        ),
        (
            "concat-feature",
            LayerSpec::ConcatFeature { features: 2 },
            vec![2, 4],
            Some(vec![2, 2]),
            Mode::Train,
        ),
    ];
    let mut worst = ("", 0.0f64);
    for (i, (name, spec, shape, aux, mode)) in layers.into_iter().enumerate() {
        let e = layer_error(spec, &shape, aux.as_deref(), mode, 300 + i as u64);
        if e >= worst.1 {
            worst = (name, e);
        }
    }
    let mut losses = Vec::new();
    for (i, kind) in [ModelKind::Vae, ModelKind::Cvae, ModelKind::GmmCvae]
        .into_iter()
        .enumerate()
    {
        losses.push((kind.label(), loss_error(kind, 400 + i as u64)));
    }
    let worst_loss = losses.iter().map(|l| l.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let loss_text: Vec<String> = losses.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    Outcome::new(
        worst.1 < TOL && worst_loss < TOL && secs < 60.0,
        format!(
            "14 layer cases, worst {} {:.1e}; full loss {} (< 1e-3), {secs:.1} s (< 60 s)",
            worst.0,
            worst.1,
            loss_text.join(", ")
        ),
    )
}
