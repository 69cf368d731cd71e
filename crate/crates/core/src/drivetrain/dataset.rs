use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sim::{jitter_params, simulate, DrivetrainParams, TorqueProfile, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::signal::{TimeSeries, DEFAULT_SIGNAL_LEN};
use crate::{par, seed};

pub const TORQUE_BINS: usize = 7;

/// Equal-width bin of `torque` over [−300, 1000] Nm, clamped to the last bin.
pub fn torque_bin(torque: f64) -> usize {
    let raw = (TORQUE_BINS as f64 * (torque + 300.0) / 1300.0).floor();
    raw.clamp(0.0, (TORQUE_BINS - 1) as f64) as usize
}

/// Inclusive-exclusive Nm range of a torque bin.
pub fn torque_bin_range(bin: usize) -> (f64, f64) {
    let w = 1300.0 / TORQUE_BINS as f64;
    (-300.0 + w * bin as f64, -300.0 + w * (bin + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub name: String,
    pub params: DrivetrainParams,
}

pub fn default_vehicles() -> Vec<VehicleSpec> {
    vec![
        VehicleSpec {
            name: "suv_a".into(),
            params: DrivetrainParams::vehicle_a(),
        },
        VehicleSpec {
            name: "suv_b".into(),
            params: DrivetrainParams::vehicle_b(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Step targets, Nm.
    pub torque_levels: Vec<f64>,
    /// Torque held before the step, Nm.
    pub base_torque: f64,
    pub repetitions: usize,
    /// Samples per windowed signal.
    pub signal_len: usize,
    /// Nominal step time, s.
    pub step_time: f64,
    /// Uniform step-time jitter half-width, s.
    pub step_jitter: f64,
    /// Relative stiffness/damping jitter half-width.
    pub param_jitter: f64,
    pub oversample: usize,
    /// Machine-speed label range, rpm.
    pub rpm_range: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            torque_levels: vec![-250.0, -120.0, 60.0, 180.0, 400.0, 600.0, 800.0, 1000.0],
            base_torque: 0.0,
            repetitions: 20,
            signal_len: DEFAULT_SIGNAL_LEN,
            step_time: 1.0,
            step_jitter: 0.1,
            param_jitter: 0.02,
            oversample: 10,
            rpm_range: [0.0, 14_000.0],
        }
    }
}

impl GridSpec {
    pub fn n_cells(&self, n_vehicles: usize) -> usize {
        self.torque_levels.len() * n_vehicles * self.repetitions
    }

    pub fn validate(&self, n_vehicles: usize) -> Result<()> {
        if self.torque_levels.len() < 2 {
            return Err(Error::Config(
                "grid needs at least two torque levels".into(),
            ));
        }
        if n_vehicles == 0 {
            return Err(Error::Config("grid needs at least one vehicle type".into()));
        }
        if self.repetitions == 0 || self.signal_len < 2 {
            return Err(Error::Config(
                "repetitions and signal_len must be positive".into(),
            ));
        }
        let half = self.signal_len as f64 / (2.0 * SAMPLE_RATE);
        if self.step_time - self.step_jitter < half {
            return Err(Error::Config(format!(
                "step_time {} s minus jitter leaves less than {half} s of lead-in",
                self.step_time
            )));
        }
        if !(self.rpm_range[0] <= self.rpm_range[1]) {
            return Err(Error::Config("rpm_range must be ordered".into()));
        }
        Ok(())
    }

    /// Simulated duration covering the latest step plus one window.
    pub fn horizon(&self) -> f64 {
        self.step_time + self.step_jitter + self.signal_len as f64 / SAMPLE_RATE
    }
}

/// A windowed jerk signal with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub jerk: TimeSeries,
    pub torque_nm: f64,
    pub rpm: f64,
    pub vehicle_type: usize,
    pub torque_bin: usize,
    pub seed: u64,
}

/// Grid coordinates of cell `i` in (torque, vehicle, repetition) order.
pub fn cell_coords(grid: &GridSpec, n_vehicles: usize, i: usize) -> (usize, usize, usize) {
    let rep = i % grid.repetitions;
    let v = (i / grid.repetitions) % n_vehicles;
    let t = i / (grid.repetitions * n_vehicles);
    (t, v, rep)
}

pub fn synth_dataset(
    grid: &GridSpec,
    vehicles: &[VehicleSpec],
    master_seed: u64,
) -> Result<Vec<RawSignal>> {
    grid.validate(vehicles.len())?;
    let n = grid.n_cells(vehicles.len());
    par::try_map_range(n, |i| {
        let (ti, vi, rep) = cell_coords(grid, vehicles.len(), i);
        let cell_seed = seed::derive_indexed(master_seed, "synth", i as u64);
        synth_cell(grid, &vehicles[vi], grid.torque_levels[ti], cell_seed)
            .map(|(jerk, rpm)| RawSignal {
                jerk,
                torque_nm: grid.torque_levels[ti],
                rpm,
                vehicle_type: vi,
                torque_bin: torque_bin(grid.torque_levels[ti]),
                seed: cell_seed,
            })
            .map_err(|e| annotate(e, ti, vi, rep))
    })
}

/// One windowed jerk signal for a target torque, plus its rpm label.
pub fn synth_cell(
    grid: &GridSpec,
    vehicle: &VehicleSpec,
    target: f64,
    cell_seed: u64,
) -> Result<(TimeSeries, f64)> {
    let mut rng = seed::rng(seed::derive(cell_seed, &["jitter"]));
    let step = grid.step_time
        + if grid.step_jitter > 0.0 {
            rng.random_range(-grid.step_jitter..=grid.step_jitter)
        } else {
            0.0
        };
    let params = jitter_params(&vehicle.params, grid.param_jitter, &mut rng);
    let rpm = rng.random_range(grid.rpm_range[0]..=grid.rpm_range[1]);
    let profile = TorqueProfile::step(grid.base_torque, target, step);
    let sim = simulate(
        &params,
        &profile,
        grid.horizon(),
        grid.oversample,
        seed::derive(cell_seed, &["noise"]),
    )?;
    let jerk = window_around(&sim.jerk, step, grid.signal_len)?;
    Ok((jerk, rpm))
}

/// Linear two-mass response at the nominal step time: no backlash, no
/// sensor noise, no parameter or timing jitter.
pub fn physics_baseline(grid: &GridSpec, vehicle: &VehicleSpec, target: f64) -> Result<TimeSeries> {
    grid.validate(1)?;
    let profile = TorqueProfile::step(grid.base_torque, target, grid.step_time);
    let sim = simulate(
        &vehicle.params.linearized(),
        &profile,
        grid.horizon(),
        grid.oversample,
        0,
    )?;
    window_around(&sim.jerk, grid.step_time, grid.signal_len)
}

/// `len` samples centered on time `center` (seconds).
pub fn window_around(series: &TimeSeries, center: f64, len: usize) -> Result<TimeSeries> {
    let mid = (center * series.sample_rate).round() as isize;
    let start = mid - (len / 2) as isize;
    if start < 0 || start as usize + len > series.len() {
        return Err(Error::Length(format!(
            "window of {len} around t = {center} s does not fit {} samples",
            series.len()
        )));
    }
    let s = start as usize;
    TimeSeries::new(series.samples[s..s + len].to_vec(), series.sample_rate)
}

fn annotate(e: Error, ti: usize, vi: usize, rep: usize) -> Error {
    let at = format!("grid cell (torque {ti}, vehicle {vi}, rep {rep})");
    match e {
        Error::Integration { step, time, reason } => Error::Integration {
            step,
            time,
            reason: format!("{reason} at {at}"),
        },
        other => Error::Config(format!("{at}: {other}")),
    }
}
