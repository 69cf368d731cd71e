//! Time/frequency transforms for jerk signals.

pub mod fft;
pub mod griffin_lim;
pub mod io;
pub mod spectrum;
pub mod stft;

pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLimConfig, GriffinLimOutput};
pub use stft::{
    exp_scale, istft, log_scale, magnitude_phase, recompose, stft, ComplexSpectrogram,
    LogMagSpectrogram, PhaseSpectrogram, StftConfig, StftPlan, TimeSeries, WindowKind,
    DEFAULT_SIGNAL_LEN,
};
