//! Region averaging and band-pass filtering of the channel matrix.

mod butterworth;

pub use butterworth::{design_bandpass, Biquad, FilterCoefficients};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionMeta, ChannelMatrix, Frame, RegionMesh};

/// Band-pass filter settings; cutoffs are in beats per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut_bpm: f64,
    pub high_cut_bpm: f64,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            order: 5,
            low_cut_bpm: 24.0,
            high_cut_bpm: 300.0,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidParameter("filter order must be positive".into()));
        }
        let nyquist_bpm = 60.0 * sample_rate_hz / 2.0;
        if !(0.0 < self.low_cut_bpm && self.low_cut_bpm < self.high_cut_bpm && self.high_cut_bpm < nyquist_bpm) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < {} < {} < {nyquist_bpm} bpm (Nyquist)",
                self.low_cut_bpm, self.high_cut_bpm
            )));
        }
        Ok(())
    }

    pub fn design(&self, sample_rate_hz: f64) -> Result<FilterCoefficients> {
        self.validate(sample_rate_hz)?;
        design_bandpass(self.order, self.low_cut_bpm / 60.0, self.high_cut_bpm / 60.0, sample_rate_hz)
    }

    /// Number of effectively independent samples left in `frame_count`
    /// frames of white noise after this filter.
    pub fn effective_frames(&self, sample_rate_hz: f64, frame_count: usize) -> Result<f64> {
        let fraction = self.design(sample_rate_hz)?.noise_dof_fraction(self.zero_phase);
        Ok((fraction * frame_count as f64).max(1.0))
    }
}

/// Designs the band-pass described by `spec`.
pub fn design_butterworth_bandpass(spec: &FilterSpec, sample_rate_hz: f64) -> Result<FilterCoefficients> {
    spec.design(sample_rate_hz)
}

/// Mean intensity of every mesh region in every frame. Row `i` of the
/// result is region `i` of the mesh, column `j` is frame `j`.
pub fn region_means(
    frames: &[Frame],
    mesh: &RegionMesh,
    sample_rate_hz: f64,
    source_label: &str,
) -> Result<ChannelMatrix> {
    if frames.is_empty() {
        return Err(Error::InsufficientData("no frames".into()));
    }
    if let Some((j, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != mesh.frame_dims()) {
        return Err(Error::DimensionMismatch(format!(
            "frame {j} is {:?} but mesh expects {:?}",
            f.dims(),
            mesh.frame_dims()
        )));
    }
    if let Some(r) = mesh.regions().iter().find(|r| r.pixels.is_empty()) {
        return Err(Error::Validation(format!("region {} is empty", r.id)));
    }
    let regions = mesh.regions();
    let values = DMatrix::from_fn(regions.len(), frames.len(), |i, j| {
        let pixels = &regions[i].pixels;
        let sum: f64 = pixels.iter().map(|&(r, c)| frames[j].get(r, c)).sum();
        sum / pixels.len() as f64
    });
    let meta = AcquisitionMeta::new(sample_rate_hz, frames.len(), source_label)?;
    ChannelMatrix::new(values, meta)
}

/// Applies the band-pass to each channel.
///
/// In zero-phase mode each row is mirror padded by three settling
/// lengths on both ends, filtered forward and backward, and trimmed.
pub fn bandpass(channels: &ChannelMatrix, spec: &FilterSpec) -> Result<ChannelMatrix> {
    if channels.is_filtered() {
        return Err(Error::Validation("channel matrix is already filtered".into()));
    }
    let coeffs = spec.design(channels.meta().sample_rate_hz)?;
    let pad = 3 * coeffs.settling_samples();
    let n_t = channels.n_frames();
    if n_t <= pad {
        return Err(Error::InsufficientData(format!(
            "signal of {n_t} samples is shorter than the {pad}-sample filter warm-up \
             (3x settling length); record longer or relax the low cutoff"
        )));
    }

    let rows: Vec<Vec<f64>> = (0..channels.n_regions())
        .into_par_iter()
        .map(|i| {
            let row = channels.row(i);
            if spec.zero_phase {
                filtfilt(&coeffs, &row, pad)
            } else {
                coeffs.filter(&row)
            }
        })
        .collect();
    let values = DMatrix::from_fn(rows.len(), n_t, |i, j| rows[i][j]);
    channels.replace_values(values, true)
}

/// Forward-backward filtering of one signal with mirror padding.
///
/// The mirror leaves out the edge sample itself. Point reflection about the
/// edge sample would shift the local mean of the padding by twice that
/// (noisy) sample, and the band-pass would turn the step into a transient
/// with the same shape in every channel.
pub fn filtfilt(coeffs: &FilterCoefficients, x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| x[k]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|k| x[n - 1 - k]));

    let mut y = coeffs.filter(&ext);
    y.reverse();
    let mut y = coeffs.filter(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::model::Region;

    fn matrix(rows: Vec<Vec<f64>>, fs: f64) -> ChannelMatrix {
        let n_t = rows[0].len();
        let meta = AcquisitionMeta::new(fs, n_t, "test").unwrap();
        ChannelMatrix::new(DMatrix::from_fn(rows.len(), n_t, |i, j| rows[i][j]), meta).unwrap()
    }

    fn tone(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|j| (2.0 * PI * freq * j as f64 / fs + phase).sin()).collect()
    }

    #[test]
    fn constant_frames_give_constant_channels() {
        let mesh = RegionMesh::grid((10, 10), 5).unwrap();
        let frames = vec![Frame::constant(10, 10, 3.25); 4];
        let m = region_means(&frames, &mesh, 58.0, "c").unwrap();
        assert_eq!(m.n_regions(), 4);
        assert!(m.values().iter().all(|&v| v == 3.25));
        assert!(!m.is_filtered());
    }

    #[test]
    fn single_pixel_region_tracks_pixel() {
        let mesh = RegionMesh::new(vec![Region { id: 0, area: None, pixels: vec![(1, 0)] }], (2, 2)).unwrap();
        let frames: Vec<Frame> = (0..5)
            .map(|j| Frame::new(2, 2, vec![0.0, 0.0, j as f64 * 1.5, 0.0]).unwrap())
            .collect();
        let m = region_means(&frames, &mesh, 58.0, "p").unwrap();
        assert_eq!(m.row(0), vec![0.0, 1.5, 3.0, 4.5, 6.0]);
    }

    #[test]
    fn two_by_two_region_mean() {
        let mesh = RegionMesh::grid((2, 2), 2).unwrap();
        let frames = vec![Frame::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
        let m = region_means(&frames, &mesh, 58.0, "m").unwrap();
        assert_eq!(m.values()[(0, 0)], 2.5);
    }

    #[test]
    fn frame_dimension_mismatch() {
        let mesh = RegionMesh::grid((10, 10), 5).unwrap();
        let frames = vec![Frame::constant(10, 10, 1.0), Frame::constant(10, 11, 1.0)];
        assert!(matches!(
            region_means(&frames, &mesh, 58.0, "x"),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dc_is_removed() {
        let fs = 58.0;
        let n = 3480;
        let m = matrix(vec![vec![7.0; n]], fs);
        let y = bandpass(&m, &FilterSpec::default()).unwrap();
        assert!(y.is_filtered());
        let edge = 300;
        let worst = y.row(0)[edge..n - edge].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-6 * 7.0, "residual DC {worst}");
    }

    #[test]
    fn in_band_tone_preserved_out_of_band_rejected() {
        let fs = 58.0;
        let n = 3480;
        let m = matrix(vec![tone(1.5, fs, n, 0.3), tone(10.0, fs, n, 0.0)], fs);
        let y = bandpass(&m, &FilterSpec::default()).unwrap();
        let steady = 600..n - 600;
        let amp = |row: &[f64]| row[steady.clone()].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let pass = amp(&y.row(0));
        assert!((pass - 1.0).abs() < 0.02, "in-band amplitude {pass}");
        let stop = amp(&y.row(1));
        assert!(20.0 * stop.log10() < -20.0, "10 Hz amplitude {stop}");
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let fs = 58.0;
        let n = 3480;
        let x = tone(1.2, fs, n, 0.7);
        let m = matrix(vec![x.clone()], fs);
        let y = bandpass(&m, &FilterSpec::default()).unwrap().row(0);
        let inner = 600..n - 600;
        let xcorr = |lag: isize| -> f64 {
            inner
                .clone()
                .map(|j| x[j] * y[(j as isize + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn short_signal_is_reported() {
        let m = matrix(vec![vec![1.0; 50]], 58.0);
        assert!(matches!(
            bandpass(&m, &FilterSpec::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn refuses_double_filtering() {
        let m = matrix(vec![tone(1.0, 58.0, 3000, 0.0)], 58.0);
        let y = bandpass(&m, &FilterSpec::default()).unwrap();
        assert!(bandpass(&y, &FilterSpec::default()).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec::default().validate(58.0).is_ok());
        assert!(FilterSpec::default().validate(10.0).is_err());
        let bad = FilterSpec { low_cut_bpm: 300.0, high_cut_bpm: 24.0, ..Default::default() };
        assert!(bad.validate(58.0).is_err());
    }
}
