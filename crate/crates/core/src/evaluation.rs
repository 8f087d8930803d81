//! Error measures between a recovered heart-rate series and ground truth at
//! several time granularities.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{uniform_grid, IhrSeries};

/// Non-overlapping window means of width `granularity_s`.
///
/// Windows start half a native step before the first sample, so that at the
/// native step every sample sits in the middle of its own window. Outputs
/// are stamped at window centres; a trailing window not fully covered by
/// the series is dropped.
pub fn resample_mean(series: &IhrSeries, granularity_s: f64) -> Result<IhrSeries> {
    if !(granularity_s.is_finite() && granularity_s > 0.0) {
        return Err(Error::InvalidParameter(format!("granularity must be positive, got {granularity_s}")));
    }
    let step = series
        .median_step()
        .ok_or_else(|| Error::InsufficientData("window means need at least two samples".into()))?;
    let anchor = series.start() - 0.5 * step;
    let support_end = series.end() + 0.5 * step;
    let windows = ((support_end - anchor) / granularity_s + 1e-9).floor() as usize;

    let mut sums = vec![(0.0, 0usize); windows];
    for (&t, &v) in series.timestamps().iter().zip(series.bpm()) {
        let k = ((t - anchor) / granularity_s).floor() as usize;
        if let Some(slot) = sums.get_mut(k) {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    let (times, bpm): (Vec<f64>, Vec<f64>) = sums
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(k, (s, n))| (anchor + (k as f64 + 0.5) * granularity_s, s / *n as f64))
        .unzip();
    if times.is_empty() {
        return Err(Error::InsufficientData(format!(
            "series of {} s shorter than one {granularity_s} s window",
            support_end - anchor
        )));
    }
    IhrSeries::new(times, bpm)
}

/// Pairs the two series on the timestamps of the sparser one, restricted to
/// the common support, interpolating the denser one linearly.
fn align(a: &IhrSeries, b: &IhrSeries) -> Result<(Vec<f64>, Vec<f64>)> {
    let step = |s: &IhrSeries| s.median_step().unwrap_or(f64::INFINITY);
    let a_is_sparse = step(a) >= step(b);
    let (sparse, dense) = if a_is_sparse { (a, b) } else { (b, a) };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (&t, &v) in sparse.timestamps().iter().zip(sparse.bpm()) {
        if let Some(w) = dense.value_at(t) {
            xs.push(v);
            ys.push(w);
        }
    }
    if xs.is_empty() {
        return Err(Error::InsufficientData("series do not overlap in time".into()));
    }
    Ok(if a_is_sparse { (xs, ys) } else { (ys, xs) })
}

/// Root mean square difference in bpm over the aligned samples.
pub fn rmse(a: &IhrSeries, b: &IhrSeries) -> Result<f64> {
    let (x, y) = align(a, b)?;
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    Ok(mse.sqrt())
}

/// Mean of `|a - truth| / truth`, in percent.
pub fn relative_error(a: &IhrSeries, truth: &IhrSeries) -> Result<f64> {
    let (x, t) = align(a, truth)?;
    if let Some(bad) = t.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Validation(format!("truth value {bad} is not positive")));
    }
    let mean = x.iter().zip(&t).map(|(p, q)| (p - q).abs() / q).sum::<f64>() / x.len() as f64;
    Ok(100.0 * mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub granularities_s: Vec<f64>,
    /// Granularity at which the relative error is reported.
    pub relative_granularity_s: f64,
    /// Search shifts of the estimate within +-1 s for the smallest RMSE at
    /// the finest granularity.
    pub lag_search: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            granularities_s: vec![1.0, 10.0, 30.0],
            relative_granularity_s: 30.0,
            lag_search: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.granularities_s.is_empty() {
            return Err(Error::InvalidParameter("at least one granularity is required".into()));
        }
        for &g in self.granularities_s.iter().chain([&self.relative_granularity_s]) {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter(format!("granularity must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityError {
    pub granularity_s: f64,
    pub rmse_bpm: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub dataset: String,
    pub rmse: Vec<GranularityError>,
    pub relative_granularity_s: f64,
    pub relative_error_pct: f64,
    pub lag_s: f64,
}

impl ErrorReport {
    pub fn rmse_at(&self, granularity_s: f64) -> Option<f64> {
        self.rmse
            .iter()
            .find(|g| g.granularity_s == granularity_s)
            .map(|g| g.rmse_bpm)
    }

    /// Header line such as `dataset,rmse_1s,rmse_10s,rmse_30s,relerr_30s_pct`.
    pub fn table_header(&self) -> String {
        let mut out = String::from("dataset");
        for g in &self.rmse {
            write!(out, ",rmse_{}s", g.granularity_s).unwrap();
        }
        write!(out, ",relerr_{}s_pct", self.relative_granularity_s).unwrap();
        out
    }

    pub fn table_row(&self) -> String {
        let mut out = self.dataset.clone();
        for g in &self.rmse {
            write!(out, ",{:.4}", g.rmse_bpm).unwrap();
        }
        write!(out, ",{:.4}", self.relative_error_pct).unwrap();
        out
    }
}

/// Table of several reports sharing one header.
pub fn report_table(reports: &[ErrorReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        out.push_str(&first.table_header());
        out.push('\n');
    }
    for r in reports {
        out.push_str(&r.table_row());
        out.push('\n');
    }
    out
}

fn shifted(series: &IhrSeries, lag_s: f64) -> Result<IhrSeries> {
    IhrSeries::new(series.timestamps().iter().map(|t| t + lag_s).collect(), series.bpm().to_vec())
}

fn metrics_at_lag(
    estimate: &IhrSeries,
    truth: &IhrSeries,
    options: &EvalOptions,
    lag_s: f64,
) -> Result<(Vec<GranularityError>, f64)> {
    let estimate = shifted(estimate, lag_s)?;
    let start = estimate.start().max(truth.start());
    let end = estimate.end().min(truth.end());
    if end < start {
        return Err(Error::InsufficientData("estimate and truth do not overlap in time".into()));
    }
    // Both series go onto one uniform grid at the finest granularity so that
    // window means are taken over the same intervals.
    let finest = options
        .granularities_s
        .iter()
        .chain([&options.relative_granularity_s])
        .fold(f64::INFINITY, |m, &g| m.min(g));
    let grid = uniform_grid(start, end, finest);
    if grid.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "overlap of {} s too short for {finest} s granularity",
            end - start
        )));
    }
    let est = estimate.resample_linear(&grid)?;
    let tru = truth.resample_linear(&grid)?;

    let mut rmse_rows = Vec::with_capacity(options.granularities_s.len());
    for &g in &options.granularities_s {
        let (a, b) = (resample_mean(&est, g)?, resample_mean(&tru, g)?);
        rmse_rows.push(GranularityError {
            granularity_s: g,
            rmse_bpm: rmse(&a, &b)?,
            n_points: a.len(),
        });
    }
    let g = options.relative_granularity_s;
    let rel = relative_error(&resample_mean(&est, g)?, &resample_mean(&tru, g)?)?;
    Ok((rmse_rows, rel))
}

/// RMSE at each granularity and the relative error, after putting both
/// series on a shared uniform grid over their common support.
pub fn evaluate(dataset: &str, estimate: &IhrSeries, truth: &IhrSeries, options: &EvalOptions) -> Result<ErrorReport> {
    options.validate()?;
    let mut lag = 0.0;
    if options.lag_search {
        let mut best = f64::INFINITY;
        for step in -10..=10 {
            let candidate = step as f64 * 0.1;
            let Ok((rows, _)) = metrics_at_lag(estimate, truth, options, candidate) else {
                continue;
            };
            let score = rows[0].rmse_bpm;
            if score < best - 1e-12 || (score <= best + 1e-12 && candidate.abs() < f64::abs(lag)) {
                best = score;
                lag = candidate;
            }
        }
    }
    let (rmse_rows, rel) = metrics_at_lag(estimate, truth, options, lag)?;
    Ok(ErrorReport {
        dataset: dataset.to_owned(),
        rmse: rmse_rows,
        relative_granularity_s: options.relative_granularity_s,
        relative_error_pct: rel,
        lag_s: lag,
    })
}
