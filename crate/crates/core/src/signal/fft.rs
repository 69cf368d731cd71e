//! Complex FFT plans (rustfft) and a one-sided real transform on top.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward and inverse plans of one size.
#[derive(Clone)]
pub struct Fft {
    forward: Arc<dyn rustfft::Fft<f64>>,
    inverse: Arc<dyn rustfft::Fft<f64>>,
}

impl fmt::Debug for Fft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft").field("n", &self.len()).finish()
    }
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT size must be positive");
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place forward transform, `X_k = Σ x_n e^{-2πikn/N}`.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        run(&*self.forward, buf, scratch);
    }

    /// In-place unnormalized inverse transform, `x_n = Σ X_k e^{+2πikn/N}`.
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        run(&*self.inverse, buf, scratch);
    }
}

fn run(plan: &dyn rustfft::Fft<f64>, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    assert_eq!(buf.len(), plan.len());
    scratch.resize(plan.get_inplace_scratch_len(), Complex64::default());
    plan.process_with_scratch(buf, scratch);
}

/// One-sided transforms of real frames of a fixed size.
#[derive(Debug, Clone)]
pub struct RealFft {
    fft: Fft,
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        Self { fft: Fft::new(n) }
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.is_empty()
    }

    pub fn n_bins(&self) -> usize {
        self.len() / 2 + 1
    }

    /// Writes the `n/2 + 1` non-negative-frequency bins of `input` into `out`.
    pub fn forward(
        &self,
        input: &[f64],
        out: &mut [Complex64],
        buf: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
    ) {
        buf.clear();
        buf.extend(input.iter().map(|&x| Complex64::new(x, 0.0)));
        self.fft.forward(buf, scratch);
        out.copy_from_slice(&buf[..self.n_bins()]);
    }

    /// Real inverse of a one-sided spectrum (Hermitian extension), scaled by 1/n.
    pub fn inverse(
        &self,
        bins: &[Complex64],
        out: &mut [f64],
        buf: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
    ) {
        let n = self.len();
        let nb = self.n_bins();
        buf.clear();
        buf.resize(n, Complex64::new(0.0, 0.0));
        buf[..nb].copy_from_slice(&bins[..nb]);
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[nb - 1].im = 0.0;
        }
        for k in nb..n {
            buf[k] = buf[n - k].conj();
        }
        self.fft.inverse(buf, scratch);
        let scale = 1.0 / n as f64;
        for (o, v) in out.iter_mut().zip(buf.iter()) {
            *o = v.re * scale;
        }
    }
}
