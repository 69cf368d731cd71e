use std::f64::consts::PI;
use std::time::Instant;

use jerkgen::seed;
use jerkgen::signal::griffin_lim::reconstruct_magnitude;
use jerkgen::signal::{
    istft, magnitude_phase, stft, GriffinLimConfig, StftConfig, StftPlan, TimeSeries,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::Outcome;

const FS: f64 = 50.0;
const LEN: usize = 76;

pub fn round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut rng = seed::rng(seed::derive_indexed(1, "round-trip", i));
        let s: Vec<f64> = (0..LEN).map(|_| rng.sample(StandardNormal)).collect();
        let back = istft(&stft(&TimeSeries::new(s.clone(), FS).unwrap(), &cfg).unwrap()).unwrap();
        assert_eq!(back.len(), LEN);
        worst = s
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-6 && secs < 5.0,
        format!("100 signals, max |error| {worst:.2e} (< 1e-6), {secs:.2} s (< 5 s)"),
    )
}

/// Low-band plus drivetrain-band tone with per-signal amplitudes, frequencies and phases.
fn two_tone(i: u64) -> TimeSeries {
    let mut rng = seed::rng(seed::derive_indexed(2, "two-tone", i));
    let (f1, f2) = (rng.random_range(0.5..2.0), rng.random_range(8.0..12.0));
    let (a1, a2) = (rng.random_range(0.5..1.5), rng.random_range(0.2..1.0));
    let (p1, p2) = (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    );
    let samples = (0..LEN)
        .map(|n| {
            let t = n as f64 / FS;
            a1 * (2.0 * PI * f1 * t + p1).sin() + a2 * (2.0 * PI * f2 * t + p2).sin()
        })
        .collect();
    TimeSeries::new(samples, FS).unwrap()
}

pub fn griffin_lim() -> Outcome {
    let cfg = StftConfig::default();
    let plan = StftPlan::new(&cfg).unwrap();
    let gl = GriffinLimConfig::default();
    let (mut worst_err, mut worst_secs, mut below, mut monotone) = (0.0f64, 0.0f64, 0, true);
    for i in 0..20 {
        let (m, _) = magnitude_phase(&stft(&two_tone(i), &cfg).unwrap());
        let start = Instant::now();
        let out = reconstruct_magnitude(&plan, &m, &gl, seed::derive_indexed(2, "gl", i)).unwrap();
        worst_secs = worst_secs.max(start.elapsed().as_secs_f64());
        assert_eq!(out.errors.len(), gl.iterations);
        monotone &= out.errors.windows(2).all(|w| w[1] <= w[0]);
        let e = out.final_error();
        worst_err = worst_err.max(e);
        below += usize::from(e < 0.05);
    }
    let rest = monotone && worst_secs < 2.0;
    Outcome::split(
        below == 20,
        rest,
        format!(
            "{below}/20 below 0.05 spectral convergence (worst {worst_err:.3}), monotone {monotone}, slowest {worst_secs:.3} s (< 2 s)"
        ),
    )
}
