use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::LossParts;
use super::model::{Architecture, ModelKind, Noise, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Mode, Tensor};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    /// Mixture components (GMM-CVAE only).
    pub components: usize,
    /// Fixed decoder scale of the Gaussian likelihood.
    pub lambda_out: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-4,
            batch_size: 32,
            seed: 0,
            model_kind: ModelKind::Vae,
            components: 3,
            lambda_out: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if !(self.lambda_out > 0.0) {
            return Err(Error::Config("lambda_out must be positive".into()));
        }
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
        .validate()
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, &["init"])
    }
}

/// Normalized spectrograms (`N × 1 × 17 × 39`) with normalized torque conditions.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train_x: Tensor,
    pub train_cond: Vec<f64>,
    pub val_x: Tensor,
    pub val_cond: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: VaeModel,
    pub best_epoch: usize,
    pub final_model: VaeModel,
    pub history: Vec<EpochLosses>,
}

/// CSV `epoch,split,total,recon,kl`.
pub fn history_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,split,total,recon,kl\n");
    for h in history {
        for (split, p) in [("train", h.train), ("val", h.val)] {
            let _ = writeln!(
                out,
                "{},{split},{:?},{:?},{:?}",
                h.epoch, p.total, p.recon, p.kl
            );
        }
    }
    out
}

fn cond_for(kind: ModelKind, c: &[f64]) -> Option<&[f64]> {
    kind.is_conditional().then_some(c)
}

/// Mean losses over `x` in evaluation mode with fixed noise.
pub fn evaluate_loss(
    model: &mut VaeModel,
    x: &Tensor,
    cond: &[f64],
    noise_seed: u64,
    batch: usize,
    lambda: f64,
) -> Result<LossParts> {
    let n = x.batch();
    if n == 0 {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let mut rng = seed::rng(noise_seed);
    let mut acc = LossParts::default();
    for start in (0..n).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let noise = Noise::draw(idx.len(), model.latent_dim(), &mut rng);
        let c: Vec<f64> = idx.iter().map(|&i| cond[i]).collect();
        let p = model.loss(
            &x.select(&idx),
            cond_for(model.kind(), &c),
            &noise,
            lambda,
            Mode::Eval,
        )?;
        let w = idx.len() as f64 / n as f64;
        acc.recon += w * p.recon;
        acc.kl += w * p.kl;
    }
    Ok(LossParts::new(acc.recon, acc.kl))
}

/// Adam training with seeded per-epoch shuffling; keeps the best-validation model.
pub fn train(
    data: &TrainData,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = data.train_x.batch();
    if n == 0 || data.val_x.batch() == 0 {
        return Err(Error::EmptyDataset(
            "training and validation splits must be nonempty".into(),
        ));
    }
    if data.train_cond.len() != n || data.val_cond.len() != data.val_x.batch() {
        return Err(Error::shape("conditions", n, data.train_cond.len()));
    }
    let arch = Architecture::published(config.model_kind, config.components)?;
    let mut model = VaeModel::new(arch, config.init_seed())?;
    let adam_cfg = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, model.params())?;
    let val_seed = seed::derive(config.seed, &["val-noise"]);
    let d = model.latent_dim();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, VaeModel)> = None;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive_indexed(
            config.seed,
            "shuffle",
            epoch as u64,
        )));
        let mut noise_rng = seed::rng(seed::derive_indexed(config.seed, "noise", epoch as u64));
        let mut acc = LossParts::default();
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.train_x.select(idx);
            let c: Vec<f64> = idx.iter().map(|&i| data.train_cond[i]).collect();
            let noise = Noise::draw(idx.len(), d, &mut noise_rng);
            model.zero_grad();
            let ctx = |e: Error| match e {
                Error::Training(m) => Error::Training(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            let p = model
                .loss(
                    &x,
                    cond_for(model.kind(), &c),
                    &noise,
                    config.lambda_out,
                    Mode::Train,
                )
                .map_err(ctx)?;
            adam.update(&mut model.params_mut()).map_err(ctx)?;
            let w = idx.len() as f64 / n as f64;
            acc.recon += w * p.recon;
            acc.kl += w * p.kl;
        }
        let val = evaluate_loss(
            &mut model,
            &data.val_x,
            &data.val_cond,
            val_seed,
            config.batch_size,
            config.lambda_out,
        )
        .map_err(|e| match e {
            Error::Training(m) => Error::Training(format!("epoch {epoch}, validation: {m}")),
            other => other,
        })?;
        let record = EpochLosses {
            epoch,
            train: LossParts::new(acc.recon, acc.kl),
            val,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| val.total < *v) {
            best = Some((val.total, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_model: model,
        history,
    })
}
