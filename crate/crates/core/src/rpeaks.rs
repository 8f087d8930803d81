//! Ground-truth heart rate from ECG R-peak times.

use crate::error::{Error, Result};
use crate::model::{interpolate_linear, IhrSeries};

/// Converts R-peak times into a heart-rate series on `grid`.
///
/// Each RR interval is placed at its midpoint. The interval length is
/// interpolated linearly between midpoints (and held constant between the
/// outer peaks and the outer midpoints), then converted to `60 / RR` bpm.
pub fn rpeaks_to_ihr(peaks: &[f64], grid: &[f64]) -> Result<IhrSeries> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 R-peaks, got {}",
            peaks.len()
        )));
    }
    if let Some(i) = peaks.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Validation(format!("R-peaks not strictly increasing at index {}", i + 1)));
    }
    let (first, last) = (peaks[0], peaks[peaks.len() - 1]);
    if let Some(&t) = grid.iter().find(|&&t| !(first..=last).contains(&t)) {
        return Err(Error::InvalidParameter(format!(
            "grid point {t} outside R-peak support [{first}, {last}]"
        )));
    }

    let midpoints: Vec<f64> = peaks.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let intervals: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    let lo = midpoints[0];
    let hi = midpoints[midpoints.len() - 1];

    let bpm = grid
        .iter()
        .map(|&t| {
            let rr = interpolate_linear(&midpoints, &intervals, t.clamp(lo, hi))
                .expect("clamped point lies inside midpoint support");
            60.0 / rr
        })
        .collect();
    IhrSeries::new(grid.to_vec(), bpm)
}
