use std::time::Instant;

use jerkgen::drivetrain::sim::{integrate, steady_state};
use jerkgen::drivetrain::{
    natural_frequency, simulate, steady_state_acceleration, DrivetrainParams, DrivetrainState,
    TorqueProfile,
};
use jerkgen::metrics::{mae, mse, nmae, nmse, psnr_db, snr_db, ssim};
use jerkgen::seed;
use jerkgen::signal::fft::Fft;
use jerkgen::signal::TimeSeries;
use jerkgen::stationarity::{adf_test, Regression};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::Outcome;

fn quiet(p: DrivetrainParams) -> DrivetrainParams {
    DrivetrainParams {
        backlash_halfwidth: 0.0,
        sensor_noise_std: 0.0,
        ..p
    }
}

/// Peak above 1 Hz of a heavily zero-padded spectrum, parabolically interpolated.
fn peak_frequency(x: &[f64], fs: f64) -> f64 {
    let n = 1 << 16;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    Fft::new(n).forward(&mut buf, &mut Vec::new());
    let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let lo = (n as f64 / fs) as usize;
    let k = (lo..n / 2 - 1)
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .unwrap();
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    (k as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)) * fs / n as f64
}

fn rk4_order_ratio() -> (f64, f64) {
    let p = quiet(DrivetrainParams::vehicle_a());
    let prof = TorqueProfile::step(0.0, 600.0, 0.0);
    let run = |dt: f64| {
        *integrate(
            &p,
            &prof,
            steady_state(&p, 0.0),
            dt,
            (0.5 / dt).round() as usize,
        )
        .unwrap()
        .last()
        .unwrap()
    };
    let h = 1.0 / 500.0;
    let reference = run(h / 4.0);
    let err = |s: DrivetrainState| {
        [
            s.theta_m - reference.theta_m,
            s.theta_w - reference.theta_w,
            s.omega_m - reference.omega_m,
            s.omega_w - reference.omega_w,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    // errors against the quarter step: C h⁴ (1 − 1/256) and C (h/2)⁴ (1 − 1/16)
    let expected = 16.0 * (1.0 - 1.0 / 256.0) / (1.0 - 1.0 / 16.0);
    (err(run(h)) / err(run(h / 2.0)), expected)
}

pub fn physics() -> Outcome {
    let mut rng = seed::rng(5);
    let mut worst_f = 0.0f64;
    for _ in 0..20 {
        let p = quiet(DrivetrainParams::from_vehicle(
            rng.random_range(1500.0..3000.0),
            rng.random_range(0.3..0.4),
            rng.random_range(3.0..8.0),
            rng.random_range(0.03..0.08),
            rng.random_range(7.0..12.0),
            rng.random_range(8_000.0..30_000.0),
            rng.random_range(0.01..0.05),
        ));
        let analytic = natural_frequency(&p);
        let sim = simulate(&p, &TorqueProfile::step(0.0, 300.0, 0.5), 6.5, 10, 0).unwrap();
        let ss = steady_state_acceleration(&p, 300.0);
        let post: Vec<f64> = sim.acceleration.samples[26..]
            .iter()
            .map(|a| a - ss)
            .collect();
        worst_f = worst_f.max((peak_frequency(&post, 50.0) - analytic).abs() / analytic);
    }
    let p = quiet(DrivetrainParams::vehicle_a());
    let sim = simulate(&p, &TorqueProfile::step(0.0, 500.0, 0.2), 30.0, 10, 0).unwrap();
    let expected = steady_state_acceleration(&p, 500.0);
    let ss_err = (sim.acceleration.samples.last().unwrap() - expected).abs() / expected;
    let (ratio, order) = rk4_order_ratio();
    let rk4_ok = ratio > order / 2.0 && ratio < order * 2.0;
    Outcome::new(
        worst_f < 0.02 && ss_err < 0.005 && rk4_ok,
        format!(
            "frequency error worst {:.3}% over 20 draws (< 2%); steady state {:.4}% (< 0.5%); RK4 halving ratio {ratio:.1} (fourth order: {order:.1})",
            100.0 * worst_f,
            100.0 * ss_err
        ),
    )
}

fn rejects(y: Vec<f64>) -> bool {
    // lag order and regression as used by the dataset gate
    adf_test(&TimeSeries::new(y, 50.0).unwrap(), 0, Regression::Constant)
        .unwrap()
        .reject_at_5pct
}

fn white(s: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive_indexed(6, "adf", s));
    (0..76).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn adf() -> Outcome {
    let start = Instant::now();
    let trials = 2000;
    let walk = |s| {
        white(s)
            .into_iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect()
    };
    let size = (0..trials).filter(|&s| rejects(walk(s))).count() as f64 / trials as f64;
    let power = (0..trials).filter(|&s| rejects(white(trials + s))).count() as f64 / trials as f64;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        (0.03..=0.07).contains(&size) && power > 0.8 && secs < 60.0,
        format!(
            "size {:.2}% over {trials} random walks ([3%, 7%]); power {:.1}% against iid noise (> 80%); {secs:.1} s (< 60 s)",
            100.0 * size,
            100.0 * power
        ),
    )
}

type Batch = Vec<Vec<f64>>;

fn views(b: &Batch) -> Vec<&[f64]> {
    b.iter().map(|v| v.as_slice()).collect()
}

/// Index-by-index reference values: mse, mae, nmse, nmae, ssim, snr, psnr.
fn brute_force(x: &Batch, y: &Batch) -> [f64; 7] {
    let (mut n, mut sum, mut sq, mut mx, mut mn) = (0.0, 0.0, 0.0, f64::MIN, f64::MAX);
    for row in x {
        for &v in row {
            n += 1.0;
            sum += v;
            sq += v * v;
            mx = mx.max(v);
            mn = mn.min(v);
        }
    }
    let mu = sum / n;
    let (mut var, mut mad) = (0.0, 0.0);
    for row in x {
        for &v in row {
            var += (v - mu) * (v - mu);
            mad += (v - mu).abs();
        }
    }
    let (var, mad, power) = (var / n, mad / n, sq / n);
    let c1 = (0.01 * (mx - mn)).powi(2);
    let c2 = (0.03 * (mx - mn)).powi(2);
    let (mut e2, mut e1, mut s) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let m = x[i].len() as f64;
        let (mut a2, mut a1, mut ma, mut mb) = (0.0, 0.0, 0.0, 0.0);
        for p in 0..x[i].len() {
            let d = x[i][p] - y[i][p];
            a2 += d * d;
            a1 += d.abs();
            ma += x[i][p];
            mb += y[i][p];
        }
        e2 += a2 / m;
        e1 += a1 / m;
        ma /= m;
        mb /= m;
        let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
        for p in 0..x[i].len() {
            va += (x[i][p] - ma).powi(2);
            vb += (y[i][p] - mb).powi(2);
            cv += (x[i][p] - ma) * (y[i][p] - mb);
        }
        let (va, vb, cv) = (va / m, vb / m, cv / m);
        s += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * (2.0 * cv + c2) / (va + vb + c2);
    }
    let k = x.len() as f64;
    let (e2, e1) = (e2 / k, e1 / k);
    [
        e2,
        e1,
        e2 / var,
        e1 / mad,
        s / k,
        10.0 * (power / e2).log10(),
        10.0 * (mx * mx / e2).log10(),
    ]
}

pub fn metrics() -> Outcome {
    let mut rng = seed::rng(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..8);
        let batch = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| -> Batch {
            (0..n)
                .map(|_| {
                    (0..17 * 39)
                        .map(|_| 0.3 + scale * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        };
        let x = batch(&mut rng, 1.5);
        let y = batch(&mut rng, 1.0);
        let (xv, yv) = (views(&x), views(&y));
        let got = [
            mse(&xv, &yv).unwrap(),
            mae(&xv, &yv).unwrap(),
            nmse(&xv, &yv).unwrap(),
            nmae(&xv, &yv).unwrap(),
            ssim(&xv, &yv).unwrap(),
            snr_db(&xv, &yv).unwrap(),
            psnr_db(&xv, &yv).unwrap(),
        ];
        for (g, b) in got.iter().zip(brute_force(&x, &y)) {
            worst = worst.max((g - b).abs() / b.abs().max(1.0));
        }
    }
    // MAX = 1 and a uniform 0.1 error
    let x = vec![vec![1.0, 0.0, 0.5, 0.25, 0.75]];
    let y: Batch = vec![x[0].iter().map(|v| v + 0.1).collect()];
    let spot_mse = mse(&views(&x), &views(&y)).unwrap();
    let spot_psnr = psnr_db(&views(&x), &views(&y)).unwrap();
    let self_ssim = ssim(&views(&y), &views(&y)).unwrap();
    let spots =
        (spot_mse - 0.01).abs() < 1e-15 && (spot_psnr - 20.0).abs() < 1e-12 && self_ssim == 1.0;
    Outcome::new(
        worst <= 1e-12 && spots,
        format!("seven metrics vs brute force worst relative {worst:.1e} (<= 1e-12); mse {spot_mse}, psnr {spot_psnr} dB, ssim(x, x) {self_ssim}"),
    )
}
