use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2dSame {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Batchnorm2d {
        channels: usize,
    },
    Maxpool2,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    UpsampleNearest2,
    ResizeBilinear {
        height: usize,
        width: usize,
    },
    Flatten,
    Unflatten {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Appends `channels` auxiliary feature maps.
    ConcatChannel {
        channels: usize,
    },
    /// Appends `features` auxiliary features.
    ConcatFeature {
        features: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2dSame {
                in_channels,
                out_channels,
                kernel,
            } => {
                if kernel != 1 && kernel != 3 {
                    return Err(Error::Config(format!(
                        "conv kernel {kernel} not in {{1, 3}}"
                    )));
                }
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("conv channels must be positive".into()));
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } if in_features == 0 || out_features == 0 => {
                return Err(Error::Config("linear features must be positive".into()));
            }
            LayerSpec::Batchnorm2d { channels: 0 } => {
                return Err(Error::Config("batchnorm needs channels".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2dSame { .. } => "conv2d_same",
            LayerSpec::Relu => "relu",
            LayerSpec::Batchnorm2d { .. } => "batchnorm2d",
            LayerSpec::Maxpool2 => "maxpool2",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::UpsampleNearest2 => "upsample_nearest2",
            LayerSpec::ResizeBilinear { .. } => "resize_bilinear",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Unflatten { .. } => "unflatten",
            LayerSpec::ConcatChannel { .. } => "concat_channel",
            LayerSpec::ConcatFeature { .. } => "concat_feature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv {
        input_shape: Vec<usize>,
        cols: Vec<f64>,
    },
    Relu {
        mask: Vec<bool>,
        shape: Vec<usize>,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        shape: Vec<usize>,
        batch_stats: bool,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Linear {
        input: Tensor,
    },
    Reshape {
        input_shape: Vec<usize>,
    },
    Concat {
        input_shape: Vec<usize>,
        aux_shape: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
    /// Non-learned state (batch-norm running statistics).
    pub buffers: Vec<Param>,
}

/// He-uniform bound for a given fan-in.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl Layer {
    /// Builds a layer with He-uniform weights, zero biases and unit batch-norm scale.
    pub fn new<R: Rng>(spec: LayerSpec, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let p = |s: &str| format!("{prefix}.{s}");
        let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
            let b = he_bound(fan_in);
            (0..n).map(|_| rng.random_range(-b..=b)).collect()
        };
        let (params, buffers) = match spec {
            LayerSpec::Conv2dSame {
                in_channels: ci,
                out_channels: co,
                kernel: k,
            } => (
                vec![
                    Param::new(
                        p("weight"),
                        vec![co, ci, k, k],
                        he(ci * k * k, co * ci * k * k),
                    ),
                    Param::new(p("bias"), vec![co], vec![0.0; co]),
                ],
                vec![],
            ),
            LayerSpec::Linear {
                in_features: i,
                out_features: o,
            } => (
                vec![
                    Param::new(p("weight"), vec![o, i], he(i, o * i)),
                    Param::new(p("bias"), vec![o], vec![0.0; o]),
                ],
                vec![],
            ),
            LayerSpec::Batchnorm2d { channels: c } => (
                vec![
                    Param::new(p("gamma"), vec![c], vec![1.0; c]),
                    Param::new(p("beta"), vec![c], vec![0.0; c]),
                ],
                vec![
                    Param::new(p("running_mean"), vec![c], vec![0.0; c]),
                    Param::new(p("running_var"), vec![c], vec![1.0; c]),
                ],
            ),
            _ => (vec![], vec![]),
        };
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    /// Forward pass; in train mode batch-norm running statistics are updated.
    pub fn forward(
        &mut self,
        x: &Tensor,
        aux: Option<&Tensor>,
        mode: Mode,
    ) -> Result<(Tensor, Cache)> {
        let (y, cache, stats) = self.compute(x, aux, mode)?;
        if let Some((mean, var)) = stats {
            let (rm, rv) = self.buffers.split_at_mut(1);
            for ch in 0..mean.len() {
                let m = &mut rm[0].value[ch];
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * mean[ch];
                let v = &mut rv[0].value[ch];
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * var[ch];
            }
        }
        Ok((y, cache))
    }

    /// Evaluation-mode forward pass.
    pub fn infer(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.compute(x, aux, Mode::Eval)?.0)
    }

    /// Output, cache and (for batch norm in train mode) batch mean and unbiased variance.
    #[allow(clippy::type_complexity)]
    fn compute(
        &self,
        x: &Tensor,
        aux: Option<&Tensor>,
        mode: Mode,
    ) -> Result<(Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>)> {
        if let LayerSpec::Batchnorm2d { channels } = self.spec {
            let (_, c, _, _) = x.dims4(self.spec.name())?;
            if c != channels {
                return Err(Error::shape(self.spec.name(), channels, c));
            }
            return Ok(self.batchnorm_forward(x, mode));
        }
        self.compute_stateless(x, aux).map(|(y, c)| (y, c, None))
    }

    fn compute_stateless(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<(Tensor, Cache)> {
        let name = self.spec.name();
        match self.spec.clone() {
            LayerSpec::Conv2dSame {
                in_channels,
                out_channels,
                kernel,
            } => {
                let (_, c, _, _) = x.dims4(name)?;
                if c != in_channels {
                    return Err(Error::shape(name, in_channels, c));
                }
                Ok(conv_forward(
                    x,
                    &self.params[0].value,
                    &self.params[1].value,
                    out_channels,
                    kernel,
                ))
            }
            LayerSpec::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
                Ok((
                    y,
                    Cache::Relu {
                        mask,
                        shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::Batchnorm2d { .. } => unreachable!("handled in compute"),
            LayerSpec::Maxpool2 => maxpool_forward(x),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let (n, d) = x.dims2(name)?;
                if d != in_features {
                    return Err(Error::shape(name, in_features, d));
                }
                let mut y = Tensor::zeros(&[n, out_features]);
                let b = &self.params[1].value;
                for row in y.data_mut().chunks_mut(out_features) {
                    row.copy_from_slice(b);
                }
                gemm(
                    n,
                    in_features,
                    out_features,
                    1.0,
                    x.data(),
                    false,
                    &self.params[0].value,
                    true,
                    1.0,
                    y.data_mut(),
                );
                Ok((y, Cache::Linear { input: x.clone() }))
            }
            LayerSpec::UpsampleNearest2 => {
                let (n, c, h, w) = x.dims4(name)?;
                let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
                let out = y.data_mut();
                for plane in 0..n * c {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            out[(plane * 2 * h + i) * 2 * w + j] =
                                x.data()[(plane * h + i / 2) * w + j / 2];
                        }
                    }
                }
                Ok((
                    y,
                    Cache::Reshape {
                        input_shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::ResizeBilinear { height, width } => {
                let (n, c, h, w) = x.dims4(name)?;
                let (ry, rx) = (resize_taps(h, height), resize_taps(w, width));
                let mut y = Tensor::zeros(&[n, c, height, width]);
                let out = y.data_mut();
                for plane in 0..n * c {
                    let src = &x.data()[plane * h * w..(plane + 1) * h * w];
                    for (i, &(y0, y1, ly)) in ry.iter().enumerate() {
                        for (j, &(x0, x1, lx)) in rx.iter().enumerate() {
                            out[(plane * height + i) * width + j] = (1.0 - ly)
                                * ((1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1])
                                + ly * ((1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]);
                        }
                    }
                }
                Ok((
                    y,
                    Cache::Reshape {
                        input_shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::Flatten => {
                let n = x.batch();
                let d = x.item_len();
                Ok((
                    x.clone().reshape(&[n, d])?,
                    Cache::Reshape {
                        input_shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::Unflatten {
                channels,
                height,
                width,
            } => {
                let (n, d) = x.dims2(name)?;
                if d != channels * height * width {
                    return Err(Error::shape(name, channels * height * width, d));
                }
                Ok((
                    x.clone().reshape(&[n, channels, height, width])?,
                    Cache::Reshape {
                        input_shape: x.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::ConcatChannel { channels } => {
                let aux = aux.ok_or_else(|| {
                    Error::Usage("concat_channel needs an auxiliary input".into())
                })?;
                let (n, c, h, w) = x.dims4(name)?;
                let expected = [n, channels, h, w];
                if aux.shape() != expected {
                    return Err(Error::shape(name, expected, aux.shape()));
                }
                let y = concat_channel(x, aux, n, c, channels, h * w);
                Ok((
                    y,
                    Cache::Concat {
                        input_shape: x.shape().to_vec(),
                        aux_shape: aux.shape().to_vec(),
                    },
                ))
            }
            LayerSpec::ConcatFeature { features } => {
                let aux = aux.ok_or_else(|| {
                    Error::Usage("concat_feature needs an auxiliary input".into())
                })?;
                let (n, d) = x.dims2(name)?;
                if aux.shape() != [n, features] {
                    return Err(Error::shape(name, [n, features], aux.shape()));
                }
                let y = concat_channel(x, aux, n, d, features, 1);
                Ok((
                    y,
                    Cache::Concat {
                        input_shape: x.shape().to_vec(),
                        aux_shape: aux.shape().to_vec(),
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients and returns (grad wrt input, grad wrt aux).
    pub fn backward(
        &mut self,
        cache: &Cache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let name = self.spec.name();
        let stale = || {
            Error::Contract(format!(
                "{name} backward with a cache from another layer kind"
            ))
        };
        match (self.spec.clone(), cache) {
            (
                LayerSpec::Conv2dSame {
                    out_channels,
                    kernel,
                    ..
                },
                Cache::Conv { input_shape, cols },
            ) => {
                let (n, _, h, w) = dims4_of(input_shape);
                check_grad(name, grad_out, &[n, out_channels, h, w])?;
                let dx = self.conv_backward(input_shape, cols, grad_out, kernel);
                Ok((dx, None))
            }
            (LayerSpec::Relu, Cache::Relu { mask, shape }) => {
                check_grad(name, grad_out, shape)?;
                let data = grad_out
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                Ok((Tensor::new(shape.clone(), data)?, None))
            }
            (
                LayerSpec::Batchnorm2d { .. },
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    shape,
                    batch_stats,
                },
            ) => {
                check_grad(name, grad_out, shape)?;
                Ok((
                    self.batchnorm_backward(xhat, inv_std, shape, *batch_stats, grad_out),
                    None,
                ))
            }
            (
                LayerSpec::Maxpool2,
                Cache::MaxPool {
                    input_shape,
                    argmax,
                },
            ) => {
                let (n, c, h, w) = dims4_of(input_shape);
                check_grad(name, grad_out, &[n, c, h / 2, w / 2])?;
                let mut dx = Tensor::zeros(input_shape);
                for (g, &i) in grad_out.data().iter().zip(argmax) {
                    dx.data_mut()[i] += g;
                }
                Ok((dx, None))
            }
            (
                LayerSpec::Linear {
                    in_features,
                    out_features,
                },
                Cache::Linear { input },
            ) => {
                let n = input.batch();
                check_grad(name, grad_out, &[n, out_features])?;
                let dy = grad_out.data();
                let (w, rest) = self.params.split_at_mut(1);
                gemm(
                    out_features,
                    n,
                    in_features,
                    1.0,
                    dy,
                    true,
                    input.data(),
                    false,
                    1.0,
                    &mut w[0].grad,
                );
                for row in dy.chunks(out_features) {
                    for (b, g) in rest[0].grad.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                let mut dx = Tensor::zeros(&[n, in_features]);
                gemm(
                    n,
                    out_features,
                    in_features,
                    1.0,
                    dy,
                    false,
                    &w[0].value,
                    false,
                    0.0,
                    dx.data_mut(),
                );
                Ok((dx, None))
            }
            (LayerSpec::UpsampleNearest2, Cache::Reshape { input_shape }) => {
                let (n, c, h, w) = dims4_of(input_shape);
                check_grad(name, grad_out, &[n, c, 2 * h, 2 * w])?;
                let mut dx = Tensor::zeros(input_shape);
                let g = grad_out.data();
                let out = dx.data_mut();
                for plane in 0..n * c {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            out[(plane * h + i / 2) * w + j / 2] +=
                                g[(plane * 2 * h + i) * 2 * w + j];
                        }
                    }
                }
                Ok((dx, None))
            }
            (LayerSpec::ResizeBilinear { height, width }, Cache::Reshape { input_shape }) => {
                let (n, c, h, w) = dims4_of(input_shape);
                check_grad(name, grad_out, &[n, c, height, width])?;
                let (ry, rx) = (resize_taps(h, height), resize_taps(w, width));
                let mut dx = Tensor::zeros(input_shape);
                let g = grad_out.data();
                let out = dx.data_mut();
                for plane in 0..n * c {
                    let dst = &mut out[plane * h * w..(plane + 1) * h * w];
                    for (i, &(y0, y1, ly)) in ry.iter().enumerate() {
                        for (j, &(x0, x1, lx)) in rx.iter().enumerate() {
                            let v = g[(plane * height + i) * width + j];
                            dst[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * v;
                            dst[y0 * w + x1] += (1.0 - ly) * lx * v;
                            dst[y1 * w + x0] += ly * (1.0 - lx) * v;
                            dst[y1 * w + x1] += ly * lx * v;
                        }
                    }
                }
                Ok((dx, None))
            }
            (LayerSpec::Flatten | LayerSpec::Unflatten { .. }, Cache::Reshape { input_shape }) => {
                if grad_out.len() != input_shape.iter().product::<usize>() {
                    return Err(Error::shape(name, input_shape, grad_out.shape()));
                }
                Ok((grad_out.clone().reshape(input_shape)?, None))
            }
            (
                LayerSpec::ConcatChannel { .. } | LayerSpec::ConcatFeature { .. },
                Cache::Concat {
                    input_shape,
                    aux_shape,
                },
            ) => {
                let n = input_shape[0];
                let main = input_shape[1..].iter().product::<usize>();
                let extra = aux_shape[1..].iter().product::<usize>();
                let mut out_shape = input_shape.clone();
                out_shape[1] += aux_shape[1];
                check_grad(name, grad_out, &out_shape)?;
                let mut dx = Vec::with_capacity(n * main);
                let mut da = Vec::with_capacity(n * extra);
                for item in grad_out.data().chunks(main + extra) {
                    dx.extend_from_slice(&item[..main]);
                    da.extend_from_slice(&item[main..]);
                }
                Ok((
                    Tensor::new(input_shape.clone(), dx)?,
                    Some(Tensor::new(aux_shape.clone(), da)?),
                ))
            }
            _ => Err(stale()),
        }
    }

    #[allow(clippy::type_complexity)]
    fn batchnorm_forward(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> (Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>) {
        let (n, c, h, w) = dims4_of(x.shape());
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let (gamma, beta) = (&self.params[0].value, &self.params[1].value);
        let mut batch_mean = vec![0.0; c];
        let mut batch_var = vec![0.0; c];
        for ch in 0..c {
            let plane = |i: usize| &x.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = (0..n).map(|i| plane(i).iter().sum::<f64>()).sum::<f64>() / m;
                    let var = (0..n)
                        .map(|i| plane(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                        .sum::<f64>()
                        / m;
                    batch_mean[ch] = mean;
                    batch_var[ch] = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    (mean, var)
                }
                Mode::Eval => (self.buffers[0].value[ch], self.buffers[1].value[ch]),
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    let xh = (x.data()[k] - mean) * is;
                    xhat[k] = xh;
                    y.data_mut()[k] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        let cache = Cache::BatchNorm {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            batch_stats: mode == Mode::Train,
        };
        let stats = (mode == Mode::Train).then_some((batch_mean, batch_var));
        (y, cache, stats)
    }

    fn batchnorm_backward(
        &mut self,
        xhat: &[f64],
        inv_std: &[f64],
        shape: &[usize],
        batch_stats: bool,
        g: &Tensor,
    ) -> Tensor {
        let (n, c, h, w) = dims4_of(shape);
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dx = Tensor::zeros(shape);
        for ch in 0..c {
            let is = inv_std[ch];
            let gamma = self.params[0].value[ch];
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    sum_g += g.data()[k];
                    sum_gx += g.data()[k] * xhat[k];
                }
            }
            self.params[0].grad[ch] += sum_gx;
            self.params[1].grad[ch] += sum_g;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    dx.data_mut()[k] = if batch_stats {
                        gamma * is / m * (m * g.data()[k] - sum_g - xhat[k] * sum_gx)
                    } else {
                        gamma * is * g.data()[k]
                    };
                }
            }
        }
        dx
    }

    fn conv_backward(
        &mut self,
        input_shape: &[usize],
        cols: &[f64],
        g: &Tensor,
        kernel: usize,
    ) -> Tensor {
        let (n, ci, h, w) = dims4_of(input_shape);
        let hw = h * w;
        let kk = ci * kernel * kernel;
        let co = g.shape()[1];
        let gd = g.data();
        let partials = par::map_range(n, |i| {
            let mut dw = vec![0.0; co * kk];
            gemm(
                co,
                hw,
                kk,
                1.0,
                &gd[i * co * hw..(i + 1) * co * hw],
                false,
                &cols[i * kk * hw..(i + 1) * kk * hw],
                true,
                0.0,
                &mut dw,
            );
            dw
        });
        let (wp, bp) = self.params.split_at_mut(1);
        for dw in &partials {
            for (a, b) in wp[0].grad.iter_mut().zip(dw) {
                *a += b;
            }
        }
        for i in 0..n {
            for o in 0..co {
                bp[0].grad[o] += gd[(i * co + o) * hw..(i * co + o + 1) * hw]
                    .iter()
                    .sum::<f64>();
            }
        }
        let weight = &wp[0].value;
        let mut dx = Tensor::zeros(input_shape);
        par::for_each_chunk_mut(dx.data_mut(), ci * hw, |i, dxi| {
            let mut dcol = vec![0.0; kk * hw];
            gemm(
                kk,
                co,
                hw,
                1.0,
                weight,
                true,
                &gd[i * co * hw..(i + 1) * co * hw],
                false,
                0.0,
                &mut dcol,
            );
            col2im(&dcol, dxi, ci, h, w, kernel);
        });
        dx
    }
}

fn dims4_of(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

fn check_grad(layer: &str, g: &Tensor, expected: &[usize]) -> Result<()> {
    if g.shape() != expected {
        return Err(Error::Contract(format!(
            "{layer} backward: gradient shape {:?} does not match cached forward shape {expected:?}",
            g.shape()
        )));
    }
    Ok(())
}

fn concat_channel(
    x: &Tensor,
    aux: &Tensor,
    n: usize,
    c: usize,
    extra: usize,
    plane: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(n * (c + extra) * plane);
    for i in 0..n {
        data.extend_from_slice(x.item(i));
        data.extend_from_slice(aux.item(i));
    }
    let mut shape = x.shape().to_vec();
    shape[1] = c + extra;
    Tensor::new(shape, data).expect("concat shape")
}

/// Source taps `(i0, i1, λ)` for half-pixel bilinear resizing of `inp` to `out`.
fn resize_taps(inp: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn im2col(x: &[f64], col: &mut [f64], c: usize, h: usize, w: usize, k: usize) {
    let p = k / 2;
    let hw = h * w;
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row =
                    &mut col[((ch * k + ky) * k + kx) * hw..((ch * k + ky) * k + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - p as isize;
                        row[y * w + xx] =
                            if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w {
                                src[sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], dx: &mut [f64], c: usize, h: usize, w: usize, k: usize) {
    let p = k / 2;
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ch * k + ky) * k + kx) * hw..((ch * k + ky) * k + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - p as isize;
                        if sx >= 0 && (sx as usize) < w {
                            dx[ch * hw + sy as usize * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor, weight: &[f64], bias: &[f64], co: usize, k: usize) -> (Tensor, Cache) {
    let (n, ci, h, w) = dims4_of(x.shape());
    let hw = h * w;
    let kk = ci * k * k;
    let mut cols = vec![0.0; n * kk * hw];
    par::for_each_chunk_mut(&mut cols, kk * hw, |i, col| {
        im2col(x.item(i), col, ci, h, w, k)
    });
    let mut y = Tensor::zeros(&[n, co, h, w]);
    let cols_ref = &cols;
    par::for_each_chunk_mut(y.data_mut(), co * hw, |i, out| {
        for (o, plane) in out.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[o]);
        }
        gemm(
            co,
            kk,
            hw,
            1.0,
            weight,
            false,
            &cols_ref[i * kk * hw..(i + 1) * kk * hw],
            false,
            1.0,
            out,
        );
    });
    (
        y,
        Cache::Conv {
            input_shape: x.shape().to_vec(),
            cols,
        },
    )
}

fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Cache)> {
    let (n, c, h, w) = x.dims4("maxpool2")?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2", "H, W >= 2", x.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0; n * c * oh * ow];
    let data = x.data();
    for plane in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = plane * h * w + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = plane * h * w + (2 * i + di) * w + 2 * j + dj;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                let o = (plane * oh + i) * ow + j;
                y.data_mut()[o] = data[best];
                argmax[o] = best;
            }
        }
    }
    Ok((
        y,
        Cache::MaxPool {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}
