//! CSV persistence for signals and spectrograms.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::stft::{LogMagSpectrogram, StftConfig, TimeSeries};
use crate::error::{Error, Result};

/// Formats `x` with six significant digits in positional notation.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_time_series(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 24 + 8);
    out.push_str("t,value\n");
    for (i, v) in series.samples.iter().enumerate() {
        let t = i as f64 / series.sample_rate;
        out.push_str(&format!("{},{v:?}\n", format_sig6(t)));
    }
    write_file(path, out.as_bytes())
}

/// Reads a `t,value` CSV whose time column must match `sample_rate`.
pub fn read_time_series(path: &Path, sample_rate: f64) -> Result<TimeSeries> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,value" => {}
        _ => return Err(parse_err(path, 1, "expected header `t,value`")),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(path, lineno, "expected two columns"));
        };
        let t = parse_f64(path, lineno, t)?;
        let v = parse_f64(path, lineno, v)?;
        if !t.is_finite() || !v.is_finite() {
            return Err(parse_err(path, lineno, "non-finite value"));
        }
        let expected = samples.len() as f64 / sample_rate;
        if (t - expected).abs() > 1e-5 * expected.abs().max(1.0) {
            return Err(parse_err(
                path,
                lineno,
                &format!("time {t} does not match a {sample_rate} Hz grid (expected {expected})"),
            ));
        }
        samples.push(v);
    }
    TimeSeries::new(samples, sample_rate)
}

/// Sidecar path holding the STFT configuration of a spectrogram CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_spectrogram(path: &Path, spec: &LogMagSpectrogram) -> Result<()> {
    write_file(path, grid_csv(&spec.values).as_bytes())?;
    let json =
        serde_json::to_string_pretty(&spec.config).map_err(|e| Error::json("stft config", e))?;
    write_file(&sidecar_path(path), json.as_bytes())
}

pub fn read_spectrogram(path: &Path) -> Result<LogMagSpectrogram> {
    let side = sidecar_path(path);
    let config: StftConfig = serde_json::from_str(&read_text(&side)?)
        .map_err(|e| Error::json(side.display().to_string(), e))?;
    config.validate()?;
    let values = read_grid(path)?;
    if values.nrows() != config.n_freqs() {
        return Err(Error::shape(
            format!("spectrogram {}", path.display()),
            config.n_freqs(),
            values.nrows(),
        ));
    }
    Ok(LogMagSpectrogram { values, config })
}

/// Row-major CSV of a grid, no header.
pub fn grid_csv(grid: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_grid(path: &Path) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            let v = parse_f64(path, i + 1, cell)?;
            if !v.is_finite() {
                return Err(parse_err(path, i + 1, "non-finite value"));
            }
            data.push(v);
        }
        let n = data.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(parse_err(
                    path,
                    i + 1,
                    &format!("expected {c} columns, got {n}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| parse_err(path, 0, &e.to_string()))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_f64(path: &Path, line: usize, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, &format!("invalid number {cell:?}")))
}

fn parse_err(path: &Path, line: usize, reason: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}
