//! Two-mass torsional drivetrain model and the synthetic jerk corpus.

pub mod dataset;
pub mod sim;

pub use dataset::{
    default_vehicles, physics_baseline, synth_dataset, torque_bin, GridSpec, RawSignal,
    VehicleSpec, TORQUE_BINS,
};
pub use sim::{
    natural_frequency, simulate, steady_state_acceleration, DrivetrainParams, DrivetrainState,
    ProfileKind, Simulation, TorqueProfile, SAMPLE_RATE, TORQUE_MAX, TORQUE_MIN,
};
