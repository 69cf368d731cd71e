//! Labeled latent-space generation: t-SNE map, category sampling, k-NN
//! inverse mapping, and the posterior resampling envelope.

mod generate;
mod map;
mod tsne;

pub use generate::{
    generate_from_category, generate_signals, resample_around, to_signals, Envelope,
    EnvelopeConfig, Generated, GL_ITERATIONS,
};
pub use map::{
    cholesky2, fit_and_sample_category, knn_inverse_map, knn_weights, Category, CategoryStats,
    LatentMap, PointLabel, DEFAULT_K, DEFAULT_TAU,
};
pub use tsne::{embed_tsne, joint_affinities, TsneConfig, TsneOutput};
