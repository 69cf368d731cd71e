use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signal::TimeSeries;

/// Output sample rate of every simulated signal.
pub const SAMPLE_RATE: f64 = 50.0;
pub const TORQUE_MIN: f64 = -300.0;
pub const TORQUE_MAX: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivetrainParams {
    /// Motor rotor inertia, kg·m² (motor side of the gear).
    pub motor_inertia: f64,
    /// Wheel plus reflected vehicle inertia, kg·m².
    pub wheel_side_inertia: f64,
    /// Half-shaft stiffness, Nm/rad.
    pub shaft_stiffness: f64,
    /// Half-shaft damping, Nm·s/rad.
    pub shaft_damping: f64,
    pub gear_ratio: f64,
    /// m
    pub wheel_radius: f64,
    /// kg
    pub vehicle_mass: f64,
    /// rad
    pub backlash_halfwidth: f64,
    /// m/s³
    pub sensor_noise_std: f64,
}

impl DrivetrainParams {
    /// Builds parameters whose wheel-side inertia is `wheel_inertia + m_v·r_w²`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_vehicle(
        vehicle_mass: f64,
        wheel_radius: f64,
        wheel_inertia: f64,
        motor_inertia: f64,
        gear_ratio: f64,
        shaft_stiffness: f64,
        damping_ratio: f64,
    ) -> Self {
        let j_w = wheel_inertia + vehicle_mass * wheel_radius * wheel_radius;
        let j_m = motor_inertia * gear_ratio * gear_ratio;
        let j_eff = j_m * j_w / (j_m + j_w);
        Self {
            motor_inertia,
            wheel_side_inertia: j_w,
            shaft_stiffness,
            shaft_damping: 2.0 * damping_ratio * (shaft_stiffness * j_eff).sqrt(),
            gear_ratio,
            wheel_radius,
            vehicle_mass,
            backlash_halfwidth: 0.0005,
            sensor_noise_std: 2.0,
        }
    }

    /// Large SUV variant, torsional mode near 10.9 Hz.
    pub fn vehicle_a() -> Self {
        Self::from_vehicle(2400.0, 0.35, 6.0, 0.05, 9.0, 19_000.0, 0.05)
    }

    /// Lighter variant with a longer gear, torsional mode near 9.1 Hz.
    pub fn vehicle_b() -> Self {
        Self::from_vehicle(2150.0, 0.36, 5.5, 0.045, 10.5, 16_000.0, 0.05)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("motor_inertia", self.motor_inertia),
            ("wheel_side_inertia", self.wheel_side_inertia),
            ("shaft_stiffness", self.shaft_stiffness),
            ("gear_ratio", self.gear_ratio),
            ("wheel_radius", self.wheel_radius),
            ("vehicle_mass", self.vehicle_mass),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("shaft_damping", self.shaft_damping),
            ("backlash_halfwidth", self.backlash_halfwidth),
            ("sensor_noise_std", self.sensor_noise_std),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Motor inertia seen from the wheel side of the gear.
    pub fn reflected_motor_inertia(&self) -> f64 {
        self.motor_inertia * self.gear_ratio * self.gear_ratio
    }

    pub fn effective_inertia(&self) -> f64 {
        let (jm, jw) = (self.reflected_motor_inertia(), self.wheel_side_inertia);
        jm * jw / (jm + jw)
    }

    pub fn damping_ratio(&self) -> f64 {
        self.shaft_damping / (2.0 * (self.shaft_stiffness * self.effective_inertia()).sqrt())
    }

    /// Linear baseline: same inertias and shaft, no backlash, no sensor noise.
    pub fn linearized(&self) -> Self {
        Self {
            backlash_halfwidth: 0.0,
            sensor_noise_std: 0.0,
            ..self.clone()
        }
    }
}

pub fn natural_frequency(params: &DrivetrainParams) -> f64 {
    let k = params.shaft_stiffness;
    let inv = 1.0 / params.reflected_motor_inertia() + 1.0 / params.wheel_side_inertia;
    (k * inv).sqrt() / (2.0 * PI)
}

/// Vehicle acceleration once the shaft oscillation has decayed under motor torque `torque`.
pub fn steady_state_acceleration(params: &DrivetrainParams, torque: f64) -> f64 {
    params.gear_ratio * torque * params.wheel_radius
        / (params.reflected_motor_inertia() + params.wheel_side_inertia)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    StepTipIn,
    StepTipOut,
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueProfile {
    pub kind: ProfileKind,
    /// Nm
    pub base_torque: f64,
    /// Nm
    pub target_torque: f64,
    /// s
    pub step_time: f64,
    /// Nm/s, ramp only.
    #[serde(default)]
    pub ramp_rate: f64,
}

impl TorqueProfile {
    /// Step from `base` to `target`, tip-in or tip-out by sign of the change.
    pub fn step(base: f64, target: f64, step_time: f64) -> Self {
        Self {
            kind: if target >= base {
                ProfileKind::StepTipIn
            } else {
                ProfileKind::StepTipOut
            },
            base_torque: base,
            target_torque: target,
            step_time,
            ramp_rate: 0.0,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        for t in [self.base_torque, self.target_torque] {
            if !(TORQUE_MIN..=TORQUE_MAX).contains(&t) {
                return Err(Error::Range(format!(
                    "torque {t} Nm outside [{TORQUE_MIN}, {TORQUE_MAX}]"
                )));
            }
        }
        if !(0.0..=horizon).contains(&self.step_time) {
            return Err(Error::Range(format!(
                "step time {} s outside horizon {horizon} s",
                self.step_time
            )));
        }
        match self.kind {
            ProfileKind::Ramp if !(self.ramp_rate > 0.0) => {
                Err(Error::Parameter("ramp needs a positive ramp_rate".into()))
            }
            ProfileKind::StepTipIn if self.target_torque < self.base_torque => Err(
                Error::Parameter("tip-in target is below the base torque".into()),
            ),
            ProfileKind::StepTipOut if self.target_torque > self.base_torque => Err(
                Error::Parameter("tip-out target is above the base torque".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Motor torque demand at time `t`, Nm.
    pub fn torque_at(&self, t: f64) -> f64 {
        if t < self.step_time {
            return self.base_torque;
        }
        match self.kind {
            ProfileKind::StepTipIn | ProfileKind::StepTipOut => self.target_torque,
            ProfileKind::Ramp => {
                let delta = self.target_torque - self.base_torque;
                let moved = self.ramp_rate * (t - self.step_time);
                if moved >= delta.abs() {
                    self.target_torque
                } else {
                    self.base_torque + moved * delta.signum()
                }
            }
        }
    }
}

/// Angles are wheel-side: the motor angle is divided by the gear ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivetrainState {
    pub theta_m: f64,
    pub theta_w: f64,
    pub omega_m: f64,
    pub omega_w: f64,
}

impl DrivetrainState {
    fn axpy(self, h: f64, d: Self) -> Self {
        Self {
            theta_m: self.theta_m + h * d.theta_m,
            theta_w: self.theta_w + h * d.theta_w,
            omega_m: self.omega_m + h * d.omega_m,
            omega_w: self.omega_w + h * d.omega_w,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta_m.is_finite()
            && self.theta_w.is_finite()
            && self.omega_m.is_finite()
            && self.omega_w.is_finite()
    }

    pub fn twist(&self) -> f64 {
        self.theta_m - self.theta_w
    }
}

fn dead_zone(delta: f64, b: f64) -> f64 {
    if delta > b {
        delta - b
    } else if delta < -b {
        delta + b
    } else {
        0.0
    }
}

/// Shaft torque; damping acts only while the gear flanks are in contact.
pub fn shaft_torque(params: &DrivetrainParams, s: &DrivetrainState) -> f64 {
    let delta = s.twist();
    let b = params.backlash_halfwidth;
    let rate = if b == 0.0 || delta.abs() > b {
        s.omega_m - s.omega_w
    } else {
        0.0
    };
    params.shaft_stiffness * dead_zone(delta, b) + params.shaft_damping * rate
}

fn derivative(params: &DrivetrainParams, s: &DrivetrainState, torque: f64) -> DrivetrainState {
    let tau = shaft_torque(params, s);
    DrivetrainState {
        theta_m: s.omega_m,
        theta_w: s.omega_w,
        omega_m: (params.gear_ratio * torque - tau) / params.reflected_motor_inertia(),
        omega_w: tau / params.wheel_side_inertia,
    }
}

/// Wheel angular acceleration at `s`, rad/s².
pub fn wheel_acceleration(params: &DrivetrainParams, s: &DrivetrainState) -> f64 {
    shaft_torque(params, s) / params.wheel_side_inertia
}

/// Shaft-twist steady state under constant torque: both masses share one acceleration.
pub fn steady_state(params: &DrivetrainParams, torque: f64) -> DrivetrainState {
    let alpha =
        params.gear_ratio * torque / (params.reflected_motor_inertia() + params.wheel_side_inertia);
    let tau = params.wheel_side_inertia * alpha;
    let b = params.backlash_halfwidth;
    let twist = if tau == 0.0 {
        0.0
    } else {
        tau / params.shaft_stiffness + b * tau.signum()
    };
    DrivetrainState {
        theta_m: twist,
        ..DrivetrainState::default()
    }
}

/// Shaft energy relative to the steady state of constant `torque`.
///
/// Kinetic energy of the twist rate on the effective inertia plus the
/// dead-zone spring potential measured from the steady twist; non-increasing
/// under constant torque whenever damping is non-negative.
pub fn relative_energy(params: &DrivetrainParams, s: &DrivetrainState, torque: f64) -> f64 {
    let ss = steady_state(params, torque);
    let k = params.shaft_stiffness;
    let b = params.backlash_halfwidth;
    let tau_ss = k * dead_zone(ss.twist(), b);
    let potential = |d: f64| 0.5 * k * dead_zone(d, b).powi(2) - tau_ss * d;
    let rate = s.omega_m - s.omega_w;
    0.5 * params.effective_inertia() * rate * rate + potential(s.twist()) - potential(ss.twist())
}

/// Fixed-step RK4 from `initial`; returns `steps + 1` states including the initial one.
pub fn integrate(
    params: &DrivetrainParams,
    profile: &TorqueProfile,
    initial: DrivetrainState,
    dt: f64,
    steps: usize,
) -> Result<Vec<DrivetrainState>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = initial;
    out.push(s);
    for i in 0..steps {
        let t = i as f64 * dt;
        let m0 = profile.torque_at(t);
        let mh = profile.torque_at(t + 0.5 * dt);
        let m1 = profile.torque_at(t + dt);
        let k1 = derivative(params, &s, m0);
        let k2 = derivative(params, &s.axpy(0.5 * dt, k1), mh);
        let k3 = derivative(params, &s.axpy(0.5 * dt, k2), mh);
        let k4 = derivative(params, &s.axpy(dt, k3), m1);
        s = DrivetrainState {
            theta_m: s.theta_m
                + dt / 6.0 * (k1.theta_m + 2.0 * k2.theta_m + 2.0 * k3.theta_m + k4.theta_m),
            theta_w: s.theta_w
                + dt / 6.0 * (k1.theta_w + 2.0 * k2.theta_w + 2.0 * k3.theta_w + k4.theta_w),
            omega_m: s.omega_m
                + dt / 6.0 * (k1.omega_m + 2.0 * k2.omega_m + 2.0 * k3.omega_m + k4.omega_m),
            omega_w: s.omega_w
                + dt / 6.0 * (k1.omega_w + 2.0 * k2.omega_w + 2.0 * k3.omega_w + k4.omega_w),
        };
        if !s.is_finite() {
            return Err(Error::Integration {
                step: i + 1,
                time: (i + 1) as f64 * dt,
                reason: "state became non-finite".into(),
            });
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Vehicle acceleration, m/s².
    pub acceleration: TimeSeries,
    /// m/s³, sensor noise included.
    pub jerk: TimeSeries,
    /// Shaft states at the output sample times.
    pub states: Vec<DrivetrainState>,
}

/// Simulates `horizon` seconds starting from the steady state of the base torque.
pub fn simulate(
    params: &DrivetrainParams,
    profile: &TorqueProfile,
    horizon: f64,
    oversample: usize,
    seed: u64,
) -> Result<Simulation> {
    params.validate()?;
    profile.validate(horizon)?;
    if oversample < 4 {
        return Err(Error::Parameter(format!("oversample {oversample} < 4")));
    }
    let n = (horizon * SAMPLE_RATE).round() as usize;
    if n < 2 {
        return Err(Error::Length(format!(
            "horizon {horizon} s gives fewer than 2 samples"
        )));
    }
    let dt = 1.0 / (SAMPLE_RATE * oversample as f64);
    let fine = integrate(
        params,
        profile,
        steady_state(params, profile.base_torque),
        dt,
        (n - 1) * oversample,
    )?;
    let states: Vec<DrivetrainState> = fine.iter().step_by(oversample).copied().collect();
    let accel: Vec<f64> = states
        .iter()
        .map(|s| wheel_acceleration(params, s) * params.wheel_radius)
        .collect();
    let mut jerk = differentiate(&accel, SAMPLE_RATE);
    if params.sensor_noise_std > 0.0 {
        let noise = Normal::new(0.0, params.sensor_noise_std)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = seed::rng(seed);
        for j in &mut jerk {
            *j += noise.sample(&mut rng);
        }
    }
    Ok(Simulation {
        acceleration: TimeSeries::new(accel, SAMPLE_RATE)?,
        jerk: TimeSeries::new(jerk, SAMPLE_RATE)?,
        states,
    })
}

/// Central differences, one-sided at the ends.
pub fn differentiate(x: &[f64], sample_rate: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (x[1] - x[0]) * sample_rate
            } else if i == n - 1 {
                (x[n - 1] - x[n - 2]) * sample_rate
            } else {
                (x[i + 1] - x[i - 1]) * sample_rate * 0.5
            }
        })
        .collect()
}

/// Multiplies stiffness and damping by independent factors in `1 ± spread`.
pub fn jitter_params<R: Rng>(
    params: &DrivetrainParams,
    spread: f64,
    rng: &mut R,
) -> DrivetrainParams {
    let mut f = |_: ()| {
        if spread > 0.0 {
            1.0 + rng.random_range(-spread..=spread)
        } else {
            1.0
        }
    };
    DrivetrainParams {
        shaft_stiffness: params.shaft_stiffness * f(()),
        shaft_damping: params.shaft_damping * f(()),
        ..params.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_natural_frequency() {
        let p = DrivetrainParams {
            motor_inertia: 1.0,
            wheel_side_inertia: 1.0,
            shaft_stiffness: 2.0,
            shaft_damping: 0.0,
            gear_ratio: 1.0,
            wheel_radius: 1.0,
            vehicle_mass: 1.0,
            backlash_halfwidth: 0.0,
            sensor_noise_std: 0.0,
        };
        assert!((natural_frequency(&p) - 2.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn defaults_sit_in_the_upper_band() {
        for p in [DrivetrainParams::vehicle_a(), DrivetrainParams::vehicle_b()] {
            let f = natural_frequency(&p);
            assert!((8.0..=12.0).contains(&f), "{f}");
            assert!((p.damping_ratio() - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_torque_stays_at_rest() {
        let p = DrivetrainParams {
            sensor_noise_std: 0.0,
            ..DrivetrainParams::vehicle_a()
        };
        let sim = simulate(&p, &TorqueProfile::step(0.0, 0.0, 0.5), 2.0, 10, 1).unwrap();
        assert!(sim.acceleration.samples.iter().all(|&a| a == 0.0));
        assert!(sim.jerk.samples.iter().all(|&j| j == 0.0));
    }

    #[test]
    fn out_of_range_torque_rejected() {
        let p = DrivetrainParams::vehicle_a();
        let r = simulate(&p, &TorqueProfile::step(0.0, 1500.0, 0.5), 2.0, 10, 1);
        assert!(matches!(r, Err(Error::Range(_))));
    }

    #[test]
    fn unstable_step_reports_integration_error() {
        let p = DrivetrainParams {
            shaft_stiffness: 1e12,
            ..DrivetrainParams::vehicle_a()
        };
        let r = simulate(&p, &TorqueProfile::step(0.0, 100.0, 0.1), 2.0, 4, 1);
        assert!(matches!(r, Err(Error::Integration { .. })), "{r:?}");
    }

    #[test]
    fn ramp_reaches_target() {
        let prof = TorqueProfile {
            kind: ProfileKind::Ramp,
            base_torque: 0.0,
            target_torque: 100.0,
            step_time: 1.0,
            ramp_rate: 50.0,
        };
        assert_eq!(prof.torque_at(0.5), 0.0);
        assert!((prof.torque_at(2.0) - 50.0).abs() < 1e-12);
        assert_eq!(prof.torque_at(4.0), 100.0);
    }
}
