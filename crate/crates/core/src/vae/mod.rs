//! VAE, CVAE and GMM-CVAE models, ELBO losses and training.

mod loss;
mod model;
mod train;

pub use loss::{
    gmm_kl_sample, gmm_responsibilities, kl_gaussian, kl_gaussian_std, log_normal_diag,
    log_softmax, logsumexp, recon_nll, reparameterize, GmmLatent, LatentGaussian, LossParts,
    LN_2PI,
};
pub use model::{
    Architecture, Condition, Encoding, GmmPrior, ModelKind, Noise, VaeModel, INPUT_HEIGHT,
    INPUT_WIDTH, LATENT_DIM,
};
pub use train::{
    evaluate_loss, history_csv, train, EpochLosses, TrainData, TrainOutcome, TrainingConfig,
};
