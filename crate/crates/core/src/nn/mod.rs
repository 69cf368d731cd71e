//! Reverse-mode layer stack and Adam optimizer.
//!
//! Every layer caches what its backward pass needs during a training forward
//! pass. Gradients accumulate into [`Param::grad`] until zeroed.

mod adam;
mod gemm;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gemm::gemm;
pub use layers::{he_bound, Cache, Layer, LayerSpec, Mode, Param, BN_EPS, BN_MOMENTUM};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Layers applied in order; the first concat layer consumes the auxiliary input.
#[derive(Debug, Clone)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    caches: Vec<Option<Cache>>,
}

impl Sequential {
    pub fn new<R: Rng>(specs: &[LayerSpec], prefix: &str, rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(s.clone(), &format!("{prefix}.{i}"), rng))
            .collect::<Result<Vec<_>>>()?;
        let caches = vec![None; layers.len()];
        Ok(Self { layers, caches })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Forward pass that records caches for [`Sequential::backward`].
    pub fn forward(&mut self, x: &Tensor, aux: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        self.run(x, aux, mode)
    }

    /// Evaluation-mode forward pass without caches.
    pub fn infer(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur, aux)?;
        }
        Ok(cur)
    }

    fn run(&mut self, x: &Tensor, aux: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&mut self.caches) {
            let (y, c) = layer.forward(&cur, aux, mode)?;
            *cache = Some(c);
            cur = y;
        }
        Ok(cur)
    }

    /// Backpropagates `grad` through the cached forward pass and clears the
    /// caches. Returns gradients wrt the input and the auxiliary input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut g = grad.clone();
        let mut aux_grad = None;
        for (layer, cache) in self.layers.iter_mut().zip(&mut self.caches).rev() {
            let c = cache.take().ok_or_else(|| {
                Error::Contract(format!(
                    "{} backward without a forward cache",
                    layer.spec.name()
                ))
            })?;
            let (gi, ga) = layer.backward(&c, &g)?;
            if let Some(ga) = ga {
                aux_grad = Some(ga);
            }
            g = gi;
        }
        Ok((g, aux_grad))
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.buffers.iter())
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.buffers.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }
}

/// Seeded layer stack.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<Sequential> {
    Sequential::new(specs, "net", &mut seed::rng(seed))
}
