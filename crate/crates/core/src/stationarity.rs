//! Augmented Dickey-Fuller unit-root gate.
//!
//! Regression with a constant and no trend. Critical values come from the
//! classic constant-only Dickey-Fuller table, linearly interpolated in 1/N
//! over the effective number of observations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    #[default]
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    #[serde(rename = "1%")]
    pub pct1: f64,
    #[serde(rename = "5%")]
    pub pct5: f64,
    #[serde(rename = "10%")]
    pub pct10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub n_obs: usize,
    pub critical_values: CriticalValues,
    pub reject_at_5pct: bool,
}

// Sample sizes and critical values (1%, 5%, 10%); the last row is N = ∞.
const TABLE_N: [f64; 6] = [25.0, 50.0, 100.0, 250.0, 500.0, f64::INFINITY];
const TABLE_CV: [[f64; 3]; 6] = [
    [-3.75, -3.00, -2.63],
    [-3.58, -2.93, -2.60],
    [-3.51, -2.89, -2.58],
    [-3.46, -2.88, -2.57],
    [-3.44, -2.87, -2.57],
    [-3.43, -2.86, -2.57],
];

/// Critical values for `n` effective observations.
pub fn critical_values(n: usize) -> CriticalValues {
    let x = 1.0 / n.max(1) as f64;
    let inv: Vec<f64> = TABLE_N.iter().map(|n| 1.0 / n).collect();
    // inv is decreasing; find the segment bracketing x, extrapolating past 1/25
    let seg = (0..inv.len() - 1)
        .find(|&i| x <= inv[i] && x >= inv[i + 1])
        .unwrap_or(0);
    let frac = (x - inv[seg]) / (inv[seg + 1] - inv[seg]);
    let interp = |j: usize| TABLE_CV[seg][j] + frac * (TABLE_CV[seg + 1][j] - TABLE_CV[seg][j]);
    CriticalValues {
        pct1: interp(0),
        pct5: interp(1),
        pct10: interp(2),
    }
}

pub fn adf_test(series: &TimeSeries, max_lags: usize, regression: Regression) -> Result<AdfResult> {
    let Regression::Constant = regression;
    adf_statistic(&series.samples, max_lags)
}

fn adf_statistic(y: &[f64], p: usize) -> Result<AdfResult> {
    if y.len() < p + 10 {
        return Err(Error::Length(format!(
            "ADF with {p} lags needs at least {} samples, got {}",
            p + 10,
            y.len()
        )));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate(
            "constant series has no unit-root regression".into(),
        ));
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // rows t = p..dy.len(): Δy_t on [1, y_t, Δy_{t-1}, .., Δy_{t-p}]
    let n = dy.len() - p;
    let k = 2 + p;
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    let mut row = vec![0.0; k];
    for t in p..dy.len() {
        row[0] = 1.0;
        row[1] = y[t];
        for i in 1..=p {
            row[1 + i] = dy[t - i];
        }
        for a in 0..k {
            xty[a] += row[a] * dy[t];
            for b in 0..=a {
                xtx[a * k + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[b * k + a] = xtx[a * k + b];
        }
    }
    let chol =
        cholesky(&xtx, k).ok_or_else(|| Error::Degenerate("singular ADF design matrix".into()))?;
    let beta = chol_solve(&chol, k, &xty);
    let mut rss = 0.0;
    for t in p..dy.len() {
        let mut fit = beta[0] + beta[1] * y[t];
        for i in 1..=p {
            fit += beta[1 + i] * dy[t - i];
        }
        rss += (dy[t] - fit).powi(2);
    }
    if n <= k {
        return Err(Error::Length("no residual degrees of freedom".into()));
    }
    let s2 = rss / (n - k) as f64;
    let mut e1 = vec![0.0; k];
    e1[1] = 1.0;
    let var_rho = s2 * chol_solve(&chol, k, &e1)[1];
    if !(var_rho > 0.0) || !var_rho.is_finite() {
        return Err(Error::Degenerate(
            "zero residual variance in ADF regression".into(),
        ));
    }
    let statistic = beta[1] / var_rho.sqrt();
    let critical_values = critical_values(n);
    Ok(AdfResult {
        statistic,
        lags_used: p,
        n_obs: n,
        critical_values,
        reject_at_5pct: statistic < critical_values.pct5,
    })
}

fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i * k + m] * l[j * k + m]).sum();
            if i == j {
                let d = a[i * k + i] - s;
                if !(d > 1e-13 * scale.max(f64::MIN_POSITIVE)) {
                    return None;
                }
                l[i * k + i] = d.sqrt();
            } else {
                l[i * k + j] = (a[i * k + j] - s) / l[j * k + j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|m| l[i * k + m] * z[m]).sum();
        z[i] = (b[i] - s) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| l[m * k + i] * x[m]).sum();
        x[i] = (z[i] - s) / l[i * k + i];
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub signal_id: usize,
    /// `None` when the regression was degenerate.
    pub result: Option<AdfResult>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub entries: Vec<FilterEntry>,
}

impl FilterReport {
    pub fn kept_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.kept)
            .map(|e| e.signal_id)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("signal_id,statistic,crit_5pct,kept\n");
        for e in &self.entries {
            let (stat, crit) = match &e.result {
                Some(r) => (
                    format!("{:?}", r.statistic),
                    format!("{:?}", r.critical_values.pct5),
                ),
                None => ("NaN".into(), "NaN".into()),
            };
            let _ = writeln!(out, "{},{stat},{crit},{}", e.signal_id, e.kept);
        }
        out
    }
}

/// Keeps the signals whose unit-root null is rejected at 5%.
pub fn filter_stationary(
    dataset: &[TimeSeries],
    max_lags: usize,
) -> Result<(Vec<TimeSeries>, FilterReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no signals to test".into()));
    }
    let results = crate::par::map(dataset, |s| {
        adf_test(s, max_lags, Regression::Constant).ok()
    });
    let mut kept = Vec::new();
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (sig, res)) in dataset.iter().zip(results).enumerate() {
        let keep = res.as_ref().is_some_and(|r| r.reject_at_5pct);
        if keep {
            kept.push(sig.clone());
        } else if res.is_none() {
            log::warn!("signal {i}: degenerate ADF regression, excluded");
        }
        entries.push(FilterEntry {
            signal_id: i,
            result: res,
            kept: keep,
        });
    }
    Ok((kept, FilterReport { entries }))
}
