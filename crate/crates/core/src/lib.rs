pub mod data;
pub mod drivetrain;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod seed;
pub mod signal;
pub mod stationarity;
pub mod vae;

pub use error::{Error, ErrorClass, Result};
