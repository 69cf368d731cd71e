//! One-sided power spectra and band-energy fractions.

use num_complex::Complex64;

use super::fft::RealFft;
use super::stft::TimeSeries;

/// Frequency bands (Hz, inclusive) where drivetrain jerk energy is expected:
/// the rigid-body transient and the torsional mode.
pub const PLAUSIBLE_BANDS: [(f64, f64); 2] = [(0.0, 2.0), (8.0, 12.0)];

/// Periodogram over `0..=fs/2`: `(frequencies, power)`, interior bins doubled.
pub fn power_spectrum(series: &TimeSeries) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let rfft = RealFft::new(n);
    let mut bins = vec![Complex64::default(); rfft.n_bins()];
    rfft.forward(&series.samples, &mut bins, &mut Vec::new(), &mut Vec::new());
    let freqs = (0..bins.len())
        .map(|k| k as f64 * series.sample_rate / n as f64)
        .collect();
    let power = bins
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            b.norm_sqr() / n as f64 * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    (freqs, power)
}

/// Share of spectral energy inside the union of `bands`; 0 for a silent signal.
pub fn band_energy_fraction(series: &TimeSeries, bands: &[(f64, f64)]) -> f64 {
    let (freqs, power) = power_spectrum(series);
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let inside: f64 = freqs
        .iter()
        .zip(&power)
        .filter(|(f, _)| bands.iter().any(|&(lo, hi)| **f >= lo && **f <= hi))
        .map(|(_, p)| p)
        .sum();
    inside / total
}
