use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use super::dataset::Normalization;
use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};
use crate::seed;
use crate::signal::{LogMagSpectrogram, StftConfig};
use crate::vae::{Architecture, Condition, TrainingConfig, VaeModel};

const CHECKPOINT_KIND: &str = "checkpoint";

/// Trained model plus everything needed to turn its outputs back into signals.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub stft: StftConfig,
    pub normalization: Normalization,
    pub training: TrainingConfig,
    pub split_seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    stft: StftConfig,
    normalization: Normalization,
    training: TrainingConfig,
    split_seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Parameters then buffers, in model order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let all: Vec<_> = self
            .model
            .params()
            .into_iter()
            .chain(self.model.buffers())
            .collect();
        let header = Header {
            architecture: self.model.arch.clone(),
            stft: self.stft.clone(),
            normalization: self.normalization,
            training: self.training.clone(),
            split_seed: self.split_seed,
            best_epoch: self.best_epoch,
            epochs_run: self.epochs_run,
            tensors: all
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let blob: Vec<f64> = all.iter().flat_map(|p| p.value.iter().copied()).collect();
        container::save(path, CHECKPOINT_KIND, &header, &blob)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, blob): (Header, Vec<f64>) = container::load(path, CHECKPOINT_KIND)?;
        let integrity = |reason: String| Error::Integrity {
            path: path.to_path_buf(),
            reason,
        };
        let mut model = VaeModel::new(h.architecture, 0)?;
        let n_params = model.params().len();
        if h.tensors.len() < n_params {
            return Err(integrity(format!(
                "header lists {} tensors, model has {n_params} parameters",
                h.tensors.len()
            )));
        }
        let mut offset = 0;
        fill(
            &mut model.params_mut(),
            &h.tensors[..n_params],
            &blob,
            &mut offset,
            &integrity,
        )?;
        fill(
            &mut model.buffers_mut(),
            &h.tensors[n_params..],
            &blob,
            &mut offset,
            &integrity,
        )?;
        if offset != blob.len() {
            return Err(integrity(format!(
                "{} trailing values",
                blob.len() - offset
            )));
        }
        Ok(Self {
            model,
            stft: h.stft,
            normalization: h.normalization,
            training: h.training,
            split_seed: h.split_seed,
            best_epoch: h.best_epoch,
            epochs_run: h.epochs_run,
        })
    }

    /// Network-scale condition vector for `n` copies of `torque`, range-checked first, then checked against the model kind.
    pub fn condition(&self, torque: Option<f64>, n: usize) -> Result<Option<Vec<f64>>> {
        let torque = torque.map(Condition::new).transpose()?;
        match (self.model.kind().is_conditional(), torque) {
            (true, Some(c)) => Ok(Some(vec![c.normalized(); n])),
            (false, None) => Ok(None),
            (true, None) => Err(Error::Usage(format!(
                "{} model needs a torque condition",
                self.model.kind().label()
            ))),
            (false, Some(_)) => Err(Error::Usage(
                "unconditional model takes no torque condition".into(),
            )),
        }
    }

    /// Decoder outputs de-normalized into log spectrograms.
    pub fn to_spectrograms(&self, x: &Tensor) -> Result<Vec<LogMagSpectrogram>> {
        let (n, _, f, t) = x.dims4("spectrograms")?;
        (0..n)
            .map(|i| {
                let v: Vec<f64> = x
                    .item(i)
                    .iter()
                    .map(|&v| self.normalization.denormalize(v))
                    .collect();
                Ok(LogMagSpectrogram {
                    values: ndarray::Array2::from_shape_vec((f, t), v)
                        .map_err(|e| Error::shape("spectrograms", (f, t), e.to_string()))?,
                    config: self.stft.clone(),
                })
            })
            .collect()
    }

    /// Log spectrograms as a normalized `N × 1 × F × T` tensor.
    pub fn to_tensor(&self, specs: &[&LogMagSpectrogram]) -> Result<Tensor> {
        let (f, t) = specs.first().map_or((0, 0), |s| s.shape());
        let mut data = Vec::with_capacity(specs.len() * f * t);
        for s in specs {
            if s.shape() != (f, t) {
                return Err(Error::shape("spectrograms", (f, t), s.shape()));
            }
            data.extend(s.values.iter().map(|&v| self.normalization.normalize(v)));
        }
        Tensor::new(vec![specs.len(), 1, f, t], data)
    }

    /// `n` prior draws decoded and de-normalized.
    pub fn generate_unconditional(&self, n: usize, seed_: u64) -> Result<Vec<LogMagSpectrogram>> {
        self.generate(None, n, seed_)
    }

    pub fn generate_conditional(
        &self,
        torque_nm: f64,
        n: usize,
        seed_: u64,
    ) -> Result<Vec<LogMagSpectrogram>> {
        self.generate(Some(torque_nm), n, seed_)
    }

    fn generate(
        &self,
        torque: Option<f64>,
        n: usize,
        seed_: u64,
    ) -> Result<Vec<LogMagSpectrogram>> {
        let cond = self.condition(torque, n)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let z = self
            .model
            .sample_prior(n, &mut seed::rng(seed::derive(seed_, &["prior"])));
        self.to_spectrograms(&self.model.decode(&z, cond.as_deref())?)
    }
}

fn fill(
    targets: &mut [&mut Param],
    entries: &[TensorEntry],
    blob: &[f64],
    offset: &mut usize,
    integrity: &dyn Fn(String) -> Error,
) -> Result<()> {
    if targets.len() != entries.len() {
        return Err(integrity(format!(
            "expected {} tensors, header lists {}",
            targets.len(),
            entries.len()
        )));
    }
    for (p, e) in targets.iter_mut().zip(entries) {
        if p.name != e.name || p.shape != e.shape {
            return Err(integrity(format!(
                "tensor {} {:?} does not match architecture tensor {} {:?}",
                e.name, e.shape, p.name, p.shape
            )));
        }
        let len = p.value.len();
        let src = blob
            .get(*offset..*offset + len)
            .ok_or_else(|| integrity(format!("blob ends inside {}", e.name)))?;
        p.value.copy_from_slice(src);
        *offset += len;
    }
    Ok(())
}
