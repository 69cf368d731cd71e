use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{
    gmm_responsibilities, kl_gaussian_std, log_softmax, mixture_graph, recon_nll, GmmLatent,
    LatentGaussian, LossParts, MixtureGraph, MixtureInputs,
};
use crate::drivetrain::{TORQUE_MAX, TORQUE_MIN};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Mode, Param, Sequential, Tape, Tensor};
use crate::seed;

pub const LATENT_DIM: usize = 64;
pub const INPUT_HEIGHT: usize = 17;
pub const INPUT_WIDTH: usize = 39;
const INFER_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vae,
    Cvae,
    GmmCvae,
}

impl ModelKind {
    pub fn is_conditional(self) -> bool {
        !matches!(self, ModelKind::Vae)
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Cvae => "cvae",
            ModelKind::GmmCvae => "gmm-cvae",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(ModelKind::Vae),
            "cvae" => Ok(ModelKind::Cvae),
            "gmm-cvae" | "gmm_cvae" => Ok(ModelKind::GmmCvae),
            other => Err(Error::Usage(format!(
                "unknown model kind {other:?} (vae, cvae, gmm-cvae)"
            ))),
        }
    }
}

/// Torque condition; the network sees `(torque + 300) / 1300`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub torque_nm: f64,
}

impl Condition {
    pub fn new(torque_nm: f64) -> Result<Self> {
        if !(TORQUE_MIN..=TORQUE_MAX).contains(&torque_nm) {
            return Err(Error::Range(format!(
                "torque {torque_nm} Nm outside [{TORQUE_MIN}, {TORQUE_MAX}]"
            )));
        }
        Ok(Self { torque_nm })
    }

    pub fn normalized(self) -> f64 {
        (self.torque_nm - TORQUE_MIN) / (TORQUE_MAX - TORQUE_MIN)
    }
}

/// Layer layout of a model; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ModelKind,
    pub components: usize,
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub head: LayerSpec,
    pub decoder: Vec<LayerSpec>,
}

impl Architecture {
    /// Conv encoder (32/64/96/128 channels, four 2× pools) and mirrored
    /// upsampling decoder with a bilinear resize back to 17×39.
    pub fn published(kind: ModelKind, components: usize) -> Result<Self> {
        let components = if kind == ModelKind::GmmCvae {
            components
        } else {
            1
        };
        if components == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let cond = usize::from(kind.is_conditional());
        let mut encoder = Vec::new();
        if cond == 1 {
            encoder.push(LayerSpec::ConcatChannel { channels: 1 });
        }
        let mut c_in = 1 + cond;
        for c in [32, 64, 96, 128] {
            encoder.extend([
                LayerSpec::Conv2dSame {
                    in_channels: c_in,
                    out_channels: c,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Batchnorm2d { channels: c },
                LayerSpec::Maxpool2,
            ]);
            c_in = c;
        }
        encoder.push(LayerSpec::Flatten);

        let mut decoder = Vec::new();
        if cond == 1 {
            decoder.push(LayerSpec::ConcatFeature { features: 1 });
        }
        decoder.extend([
            LayerSpec::Linear {
                in_features: LATENT_DIM + cond,
                out_features: 256,
            },
            LayerSpec::Relu,
            LayerSpec::Unflatten {
                channels: 128,
                height: 1,
                width: 2,
            },
        ]);
        for (c_in, c_out, k) in [(128, 96, 1), (96, 64, 3), (64, 32, 3)] {
            decoder.extend([
                LayerSpec::UpsampleNearest2,
                LayerSpec::Conv2dSame {
                    in_channels: c_in,
                    out_channels: c_out,
                    kernel: k,
                },
                LayerSpec::Relu,
                LayerSpec::Batchnorm2d { channels: c_out },
            ]);
        }
        decoder.extend([
            LayerSpec::UpsampleNearest2,
            LayerSpec::ResizeBilinear {
                height: INPUT_HEIGHT,
                width: INPUT_WIDTH,
            },
            LayerSpec::Conv2dSame {
                in_channels: 32,
                out_channels: 1,
                kernel: 3,
            },
        ]);
        Ok(Self {
            kind,
            components,
            latent_dim: LATENT_DIM,
            encoder,
            head: LayerSpec::Linear {
                in_features: 256,
                out_features: LATENT_DIM,
            },
            decoder,
        })
    }
}

/// Learned mixture prior `Σ_k π_k N(m_k, diag e^{r_k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub logits: Param,
    pub means: Param,
    pub log_vars: Param,
}

impl GmmPrior {
    fn new<R: Rng>(k: usize, d: usize, rng: &mut R) -> Self {
        // one component starts at the standard normal; several are spread to break symmetry
        let means = if k == 1 {
            vec![0.0; d]
        } else {
            (0..k * d).map(|_| rng.random_range(-1.0..=1.0)).collect()
        };
        Self {
            logits: Param::new("prior.logits".into(), vec![k], vec![0.0; k]),
            means: Param::new("prior.means".into(), vec![k, d], means),
            log_vars: Param::new("prior.log_vars".into(), vec![k, d], vec![0.0; k * d]),
        }
    }

    pub fn components(&self) -> usize {
        self.logits.value.len()
    }

    fn rows(p: &Param) -> Vec<Vec<f64>> {
        p.value.chunks(p.shape[1]).map(<[f64]>::to_vec).collect()
    }

    pub fn mean_rows(&self) -> Vec<Vec<f64>> {
        Self::rows(&self.means)
    }

    pub fn log_var_rows(&self) -> Vec<Vec<f64>> {
        Self::rows(&self.log_vars)
    }

    pub fn weights(&self) -> Vec<f64> {
        log_softmax(&self.logits.value)
            .into_iter()
            .map(f64::exp)
            .collect()
    }
}

/// Encoder output for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Gaussian(Vec<LatentGaussian>),
    Mixture(Vec<GmmLatent>),
}

impl Encoding {
    /// Posterior means: `μ`, or `Σ_k γ_k μ_k` for a mixture.
    pub fn means(&self) -> Vec<Vec<f64>> {
        match self {
            Encoding::Gaussian(qs) => qs.iter().map(|q| q.mu.clone()).collect(),
            Encoding::Mixture(qs) => qs.iter().map(GmmLatent::mean).collect(),
        }
    }
}

/// Standard-normal noise and component-selection uniforms for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub eps: Vec<f64>,
    pub u: Vec<f64>,
}

impl Noise {
    pub fn draw<R: Rng>(batch: usize, latent_dim: usize, rng: &mut R) -> Self {
        let eps = (0..batch * latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let u = (0..batch).map(|_| rng.random::<f64>()).collect();
        Self { eps, u }
    }

    pub fn zeros(batch: usize, latent_dim: usize) -> Self {
        Self {
            eps: vec![0.0; batch * latent_dim],
            u: vec![0.0; batch],
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub arch: Architecture,
    pub encoder: Sequential,
    /// `[μ, log σ²]` per component, in component order.
    pub heads: Vec<Sequential>,
    pub decoder: Sequential,
    pub prior: Option<GmmPrior>,
}

enum LatentStage {
    Gaussian { mu: Tensor, log_var: Tensor },
    Mixture { graphs: Vec<MixtureGraph> },
}

impl VaeModel {
    /// Seeded model; weights drawn in the order encoder, heads, decoder, prior.
    pub fn new(arch: Architecture, seed_: u64) -> Result<Self> {
        let mut rng = seed::rng(seed_);
        let encoder = Sequential::new(&arch.encoder, "encoder", &mut rng)?;
        let mut heads = Vec::with_capacity(2 * arch.components);
        for k in 0..arch.components {
            for part in ["mu", "log_var"] {
                heads.push(Sequential::new(
                    &[arch.head.clone()],
                    &format!("head.{k}.{part}"),
                    &mut rng,
                )?);
            }
        }
        let decoder = Sequential::new(&arch.decoder, "decoder", &mut rng)?;
        let prior = (arch.kind == ModelKind::GmmCvae)
            .then(|| GmmPrior::new(arch.components, arch.latent_dim, &mut rng));
        Ok(Self {
            arch,
            encoder,
            heads,
            decoder,
            prior,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.encoder.params().collect();
        out.extend(self.heads.iter().flat_map(|h| h.params()));
        out.extend(self.decoder.params());
        if let Some(p) = &self.prior {
            out.extend([&p.logits, &p.means, &p.log_vars]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.encoder.params_mut().collect();
        out.extend(self.heads.iter_mut().flat_map(|h| h.params_mut()));
        out.extend(self.decoder.params_mut());
        if let Some(p) = &mut self.prior {
            out.extend([&mut p.logits, &mut p.means, &mut p.log_vars]);
        }
        out
    }

    pub fn buffers(&self) -> Vec<&Param> {
        self.encoder
            .buffers()
            .chain(self.decoder.buffers())
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.encoder
            .buffers_mut()
            .chain(self.decoder.buffers_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check_condition(&self, batch: usize, cond: Option<&[f64]>) -> Result<()> {
        match (self.kind().is_conditional(), cond) {
            (true, None) => Err(Error::Usage(format!(
                "{} needs a torque condition",
                self.kind().label()
            ))),
            (false, Some(_)) => Err(Error::Usage("unconditional vae takes no condition".into())),
            (true, Some(c)) if c.len() != batch => Err(Error::shape("condition", batch, c.len())),
            _ => Ok(()),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4("encoder input")?;
        if (c, h, w) != (1, INPUT_HEIGHT, INPUT_WIDTH) {
            return Err(Error::shape(
                "encoder input",
                (1, INPUT_HEIGHT, INPUT_WIDTH),
                (c, h, w),
            ));
        }
        Ok(())
    }

    fn aux_maps(cond: Option<&[f64]>) -> (Option<Tensor>, Option<Tensor>) {
        match cond {
            None => (None, None),
            Some(c) => {
                let n = c.len();
                let plane = INPUT_HEIGHT * INPUT_WIDTH;
                let map = c
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, plane))
                    .collect();
                (
                    Some(
                        Tensor::new(vec![n, 1, INPUT_HEIGHT, INPUT_WIDTH], map).expect("map shape"),
                    ),
                    Some(Tensor::new(vec![n, 1], c.to_vec()).expect("cond shape")),
                )
            }
        }
    }

    fn head_outputs(&self, h: &Tensor) -> Result<Vec<Tensor>> {
        self.heads.iter().map(|head| head.infer(h, None)).collect()
    }

    /// Deterministic evaluation-mode encoding.
    pub fn encode(&self, x: &Tensor, cond: Option<&[f64]>) -> Result<Encoding> {
        self.check_input(x)?;
        self.check_condition(x.batch(), cond)?;
        let mut out_g = Vec::new();
        let mut out_m = Vec::new();
        for start in (0..x.batch()).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(x.batch())).collect();
            let xs = x.select(&idx);
            let cs = cond.map(|c| c[start..start + idx.len()].to_vec());
            let (map, _) = Self::aux_maps(cs.as_deref());
            let h = self.encoder.infer(&xs, map.as_ref())?;
            let heads = self.head_outputs(&h)?;
            for i in 0..idx.len() {
                match &self.prior {
                    None => out_g.push(LatentGaussian {
                        mu: heads[0].item(i).to_vec(),
                        log_var: heads[1].item(i).to_vec(),
                    }),
                    Some(prior) => out_m.push(self.mixture_latent(prior, &heads, i)),
                }
            }
        }
        Ok(if self.prior.is_some() {
            Encoding::Mixture(out_m)
        } else {
            Encoding::Gaussian(out_g)
        })
    }

    fn mixture_latent(&self, prior: &GmmPrior, heads: &[Tensor], i: usize) -> GmmLatent {
        let k = prior.components();
        let mu: Vec<Vec<f64>> = (0..k).map(|c| heads[2 * c].item(i).to_vec()).collect();
        let log_var: Vec<Vec<f64>> = (0..k).map(|c| heads[2 * c + 1].item(i).to_vec()).collect();
        let log_pi = log_softmax(&prior.logits.value);
        let d = self.latent_dim();
        let z_bar: Vec<f64> = (0..d)
            .map(|j| (0..k).map(|c| log_pi[c].exp() * mu[c][j]).sum())
            .collect();
        let gamma = gmm_responsibilities(&z_bar, &log_pi, &mu, &log_var);
        GmmLatent {
            log_pi,
            mu,
            log_var,
            gamma,
        }
    }

    /// Evaluation-mode decoder mean for latents `z` (`N × latent_dim`).
    pub fn decode(&self, z: &Tensor, cond: Option<&[f64]>) -> Result<Tensor> {
        let (n, d) = z.dims2("decoder input")?;
        if d != self.latent_dim() {
            return Err(Error::shape("decoder input", self.latent_dim(), d));
        }
        if !z.all_finite() {
            return Err(Error::Domain("latent vector is not finite".into()));
        }
        self.check_condition(n, cond)?;
        let mut out = Vec::with_capacity(n * INPUT_HEIGHT * INPUT_WIDTH);
        for start in (0..n).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
            let cs = cond.map(|c| c[start..start + idx.len()].to_vec());
            let (_, vec) = Self::aux_maps(cs.as_deref());
            out.extend(
                self.decoder
                    .infer(&z.select(&idx), vec.as_ref())?
                    .into_data(),
            );
        }
        Tensor::new(vec![n, 1, INPUT_HEIGHT, INPUT_WIDTH], out)
    }

    /// Decodes the posterior mean of each input.
    pub fn reconstruct(&self, x: &Tensor, cond: Option<&[f64]>) -> Result<Tensor> {
        let means = self.encode(x, cond)?.means();
        let z = Tensor::new(vec![means.len(), self.latent_dim()], means.concat())?;
        self.decode(&z, cond)
    }

    /// Latent draws from the prior: `N(0, I)`, or the learned mixture with the component chosen by `π`.
    pub fn sample_prior<R: Rng>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.latent_dim();
        let mut z = Vec::with_capacity(n * d);
        for _ in 0..n {
            match &self.prior {
                None => z.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut *rng) })),
                Some(p) => {
                    let w = p.weights();
                    let u: f64 = rng.random();
                    let mut comp = w.len() - 1;
                    let mut acc = 0.0;
                    for (c, wc) in w.iter().enumerate() {
                        acc += wc;
                        if u < acc {
                            comp = c;
                            break;
                        }
                    }
                    let (m, r) = (
                        &p.means.value[comp * d..(comp + 1) * d],
                        &p.log_vars.value[comp * d..(comp + 1) * d],
                    );
                    for j in 0..d {
                        let e: f64 = StandardNormal.sample(&mut *rng);
                        z.push(m[j] + (0.5 * r[j]).exp() * e);
                    }
                }
            }
        }
        Tensor::new(vec![n, d], z).expect("prior sample shape")
    }

    /// Batch-mean ELBO terms. In train mode, gradients of the mean total loss
    /// are accumulated into the parameters.
    pub fn loss(
        &mut self,
        x: &Tensor,
        cond: Option<&[f64]>,
        noise: &Noise,
        lambda: f64,
        mode: Mode,
    ) -> Result<LossParts> {
        self.check_input(x)?;
        let n = x.batch();
        if n == 0 {
            return Err(Error::EmptyDataset("empty batch".into()));
        }
        self.check_condition(n, cond)?;
        let d = self.latent_dim();
        if noise.eps.len() != n * d || noise.u.len() != n {
            return Err(Error::shape("noise", n * d, noise.eps.len()));
        }
        let (map, vec) = Self::aux_maps(cond);
        let train = mode == Mode::Train;

        let h = if train {
            self.encoder.forward(x, map.as_ref(), mode)?
        } else {
            self.encoder.infer(x, map.as_ref())?
        };
        let heads: Vec<Tensor> = if train {
            self.heads
                .iter_mut()
                .map(|hd| hd.forward(&h, None, mode))
                .collect::<Result<_>>()?
        } else {
            self.head_outputs(&h)?
        };

        let (stage, z, kls) = self.latent_stage(heads, noise)?;
        let x_hat = if train {
            self.decoder.forward(&z, vec.as_ref(), mode)?
        } else {
            self.decoder.infer(&z, vec.as_ref())?
        };

        let mut recon_sum = 0.0;
        let mut kl_sum = 0.0;
        for i in 0..n {
            let r = recon_nll(x.item(i), x_hat.item(i), lambda)?;
            if !r.is_finite() || !kls[i].is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss for datum {i} of the batch (recon {r}, kl {})",
                    kls[i]
                )));
            }
            recon_sum += r;
            kl_sum += kls[i];
        }
        let parts = LossParts::new(recon_sum / n as f64, kl_sum / n as f64);
        if train {
            self.backward(x, &x_hat, &stage, noise, lambda)?;
        }
        Ok(parts)
    }

    fn latent_stage(
        &self,
        heads: Vec<Tensor>,
        noise: &Noise,
    ) -> Result<(LatentStage, Tensor, Vec<f64>)> {
        let n = heads[0].batch();
        let d = self.latent_dim();
        match &self.prior {
            None => {
                let mut it = heads.into_iter();
                let (mu, log_var) = (
                    it.next().expect("mu head"),
                    it.next().expect("log_var head"),
                );
                let mut z = Vec::with_capacity(n * d);
                let mut kls = Vec::with_capacity(n);
                for i in 0..n {
                    let (m, l) = (mu.item(i), log_var.item(i));
                    let e = &noise.eps[i * d..(i + 1) * d];
                    z.extend((0..d).map(|j| m[j] + (0.5 * l[j]).exp() * e[j]));
                    kls.push(kl_gaussian_std(m, l));
                }
                Ok((
                    LatentStage::Gaussian { mu, log_var },
                    Tensor::new(vec![n, d], z)?,
                    kls,
                ))
            }
            Some(prior) => {
                let k = prior.components();
                let (pm, pl) = (prior.mean_rows(), prior.log_var_rows());
                let graphs: Vec<MixtureGraph> = crate::par::map_range(n, |i| {
                    let mu: Vec<Vec<f64>> = (0..k).map(|c| heads[2 * c].item(i).to_vec()).collect();
                    let log_var: Vec<Vec<f64>> =
                        (0..k).map(|c| heads[2 * c + 1].item(i).to_vec()).collect();
                    let inp = MixtureInputs {
                        mu: &mu,
                        log_var: &log_var,
                        logits: &prior.logits.value,
                        prior_mu: &pm,
                        prior_log_var: &pl,
                    };
                    mixture_graph(&inp, &noise.eps[i * d..(i + 1) * d], noise.u[i])
                });
                let mut z = Vec::with_capacity(n * d);
                let mut kls = Vec::with_capacity(n);
                for g in &graphs {
                    z.extend(g.z.iter().map(|&v| g.tape.value(v)));
                    kls.push(g.tape.value(g.kl));
                }
                Ok((
                    LatentStage::Mixture { graphs },
                    Tensor::new(vec![n, d], z)?,
                    kls,
                ))
            }
        }
    }

    fn backward(
        &mut self,
        x: &Tensor,
        x_hat: &Tensor,
        stage: &LatentStage,
        noise: &Noise,
        lambda: f64,
    ) -> Result<()> {
        let n = x.batch();
        let d = self.latent_dim();
        let scale = 1.0 / (n as f64 * lambda * lambda);
        let g_out: Vec<f64> = x_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * scale)
            .collect();
        let (g_z, _) = self
            .decoder
            .backward(&Tensor::new(x_hat.shape().to_vec(), g_out)?)?;
        let inv_n = 1.0 / n as f64;
        let head_grads: Vec<Tensor> = match stage {
            LatentStage::Gaussian { mu, log_var } => {
                let mut gm = vec![0.0; n * d];
                let mut gl = vec![0.0; n * d];
                for k in 0..n * d {
                    let (m, l, e, gz) =
                        (mu.data()[k], log_var.data()[k], noise.eps[k], g_z.data()[k]);
                    let sd = (0.5 * l).exp();
                    gm[k] = gz + m * inv_n;
                    gl[k] = gz * e * 0.5 * sd + 0.5 * (l.exp() - 1.0) * inv_n;
                }
                vec![Tensor::new(vec![n, d], gm)?, Tensor::new(vec![n, d], gl)?]
            }
            LatentStage::Mixture { graphs } => {
                let prior = self.prior.as_mut().expect("mixture stage implies prior");
                let k = prior.components();
                let mut heads = vec![vec![0.0; n * d]; 2 * k];
                let grads = crate::par::map_range(n, |i| {
                    let g = &graphs[i];
                    let mut seeds = vec![(g.kl, inv_n)];
                    seeds.extend(
                        g.z.iter()
                            .enumerate()
                            .map(|(j, &v)| (v, g_z.data()[i * d + j])),
                    );
                    g.tape.backward(&seeds)
                });
                for (i, (g, gr)) in graphs.iter().zip(&grads).enumerate() {
                    for c in 0..k {
                        for j in 0..d {
                            heads[2 * c][i * d + j] = Tape::grad_of(gr, g.mu[c][j]);
                            heads[2 * c + 1][i * d + j] = Tape::grad_of(gr, g.log_var[c][j]);
                            prior.means.grad[c * d + j] += Tape::grad_of(gr, g.prior_mu[c][j]);
                            prior.log_vars.grad[c * d + j] +=
                                Tape::grad_of(gr, g.prior_log_var[c][j]);
                        }
                        prior.logits.grad[c] += Tape::grad_of(gr, g.logits[c]);
                    }
                }
                heads
                    .into_iter()
                    .map(|v| Tensor::new(vec![n, d], v))
                    .collect::<Result<_>>()?
            }
        };
        let mut g_h: Option<Tensor> = None;
        for (head, g) in self.heads.iter_mut().zip(&head_grads) {
            let (gi, _) = head.backward(g)?;
            g_h = Some(match g_h {
                None => gi,
                Some(mut acc) => {
                    acc.data_mut()
                        .iter_mut()
                        .zip(gi.data())
                        .for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        self.encoder.backward(&g_h.expect("at least two heads"))?;
        Ok(())
    }
}
