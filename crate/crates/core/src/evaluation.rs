//! Error metrics of a test history against a reference history.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest shift searched by [`lag_estimate`], ticks.
pub const MAX_LAG_TICKS: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub reference_id: String,
    pub test_id: String,
    /// RMS error as a percentage of the peak absolute reference value.
    pub nrmse_percent: f64,
    /// Difference of peak absolute values, percent of the reference peak.
    pub peak_error_percent: f64,
    /// Shift of the test relative to the reference (positive = test lags).
    pub lag_estimate_ticks: Option<i64>,
    pub max_abs_error_mm: f64,
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn same_length(reference: &[f64], test: &[f64]) -> Result<()> {
    if reference.len() != test.len() {
        return Err(Error::Metric(format!(
            "histories differ in length ({} vs {}); align them first",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Metric("empty histories".into()));
    }
    Ok(())
}

/// Truncates both series to their common length.
pub fn align<'a>(reference: &'a [f64], test: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    let n = reference.len().min(test.len());
    (&reference[..n], &test[..n])
}

/// `100 · sqrt(mean((test − ref)²)) / max|ref|`.
pub fn nrmse(reference: &[f64], test: &[f64]) -> Result<f64> {
    same_length(reference, test)?;
    let mse = reference.iter().zip(test).map(|(r, t)| (t - r) * (t - r)).sum::<f64>() / reference.len() as f64;
    let p = peak(reference);
    if p == 0.0 {
        return if mse == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Metric(
                "reference is identically zero; normalized error undefined".into(),
            ))
        };
    }
    Ok(100.0 * mse.sqrt() / p)
}

pub fn peak_error_percent(reference: &[f64], test: &[f64]) -> Result<f64> {
    same_length(reference, test)?;
    let p = peak(reference);
    if p == 0.0 {
        return Err(Error::Metric("reference is identically zero".into()));
    }
    Ok(100.0 * (peak(test) - p).abs() / p)
}

/// Shift (in ticks) maximizing the cross-correlation of the mean-removed
/// series over ±[`MAX_LAG_TICKS`]. Positive when `test` lags `reference`.
pub fn lag_estimate(reference: &[f64], test: &[f64]) -> Result<i64> {
    same_length(reference, test)?;
    let n = reference.len();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (mr, mt) = (mean(reference), mean(test));
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let t: Vec<f64> = test.iter().map(|v| v - mt).collect();
    if r.iter().all(|v| *v == 0.0) || t.iter().all(|v| *v == 0.0) {
        return Err(Error::Metric("cannot estimate lag of a constant signal".into()));
    }
    let max_lag = MAX_LAG_TICKS.min(n - 1) as i64;
    let mut best = (0i64, f64::NEG_INFINITY);
    for k in -max_lag..=max_lag {
        let (r_start, t_start) = if k >= 0 { (0, k as usize) } else { ((-k) as usize, 0) };
        let len = n - k.unsigned_abs() as usize;
        let c: f64 = r[r_start..r_start + len]
            .iter()
            .zip(&t[t_start..t_start + len])
            .map(|(a, b)| a * b)
            .sum();
        // ties resolve towards the smallest |k|
        if c > best.1 || (c == best.1 && k.abs() < best.0.abs()) {
            best = (k, c);
        }
    }
    Ok(best.0)
}

/// All metrics of `test` against `reference` (common length).
pub fn compare(reference_id: &str, reference: &[f64], test_id: &str, test: &[f64], with_lag: bool) -> Result<Metrics> {
    let (r, t) = align(reference, test);
    let max_abs_error_mm = r.iter().zip(t).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(Metrics {
        reference_id: reference_id.to_string(),
        test_id: test_id.to_string(),
        nrmse_percent: nrmse(r, t)?,
        peak_error_percent: peak_error_percent(r, t)?,
        lag_estimate_ticks: if with_lag { lag_estimate(r, t).ok() } else { None },
        max_abs_error_mm,
    })
}
