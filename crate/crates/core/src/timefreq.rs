//! Short-time Fourier transform of the pulse waveform and penalised
//! extraction of its dominant frequency ridge.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::IhrSeries;
use crate::reconstruction::PpgSignal;
use crate::spectrum::{hann, padded_len};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowDescriptor {
    /// Always a symmetric Hann window.
    pub length: usize,
    pub hop: usize,
    pub n_fft: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frames along rows, frequency bins along columns.
    pub magnitudes: DMatrix<f64>,
    pub frame_times_s: Vec<f64>,
    pub bin_freqs_hz: Vec<f64>,
    pub window: WindowDescriptor,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frame_times_s.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bin_freqs_hz.len()
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_freqs_hz[1] - self.bin_freqs_hz[0]
    }

    /// Bins whose frequency lies inside `[lo, hi]`.
    pub fn band_bins(&self, band_hz: (f64, f64)) -> Option<(usize, usize)> {
        let (lo, hi) = band_hz;
        let first = self.bin_freqs_hz.iter().position(|&f| f >= lo)?;
        let last = self.bin_freqs_hz.iter().rposition(|&f| f <= hi)?;
        (first <= last).then_some((first, last))
    }

    /// Text dumps restricted to `band_hz`: the magnitude grid (one frame per
    /// line), the frame times, and the bin frequencies.
    pub fn dump(&self, band_hz: (f64, f64)) -> Option<(String, String, String)> {
        let (first, last) = self.band_bins(band_hz)?;
        let mut grid = String::new();
        for t in 0..self.n_frames() {
            for b in first..=last {
                if b > first {
                    grid.push(' ');
                }
                write!(grid, "{}", self.magnitudes[(t, b)]).unwrap();
            }
            grid.push('\n');
        }
        let times = self.frame_times_s.iter().map(|t| format!("{t}\n")).collect();
        let freqs = self.bin_freqs_hz[first..=last].iter().map(|f| format!("{f}\n")).collect();
        Some((grid, times, freqs))
    }
}

/// Magnitude STFT of the waveform with a Hann window of `window_len_s`
/// seconds (rounded to an odd number of samples) and hop `hop_s`.
pub fn stft(ppg: &PpgSignal, window_len_s: f64, hop_s: f64) -> Result<Spectrogram> {
    stft_samples(&ppg.samples, ppg.meta.sample_rate_hz, window_len_s, hop_s)
}

/// [`stft`] over raw samples.
///
/// Frames are centred at multiples of the hop, starting at the first sample;
/// the signal is mirror-padded by half a window at both ends. The FFT is
/// zero-padded so bins are at most 0.01 Hz apart.
pub fn stft_samples(samples: &[f64], sample_rate_hz: f64, window_len_s: f64, hop_s: f64) -> Result<Spectrogram> {
    let n = samples.len();
    if !(sample_rate_hz > 0.0) || n < 2 {
        return Err(Error::InvalidParameter("STFT needs a positive sample rate and at least two samples".into()));
    }
    if !(window_len_s > 0.0) || !(hop_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "window length and hop must be positive, got {window_len_s} s and {hop_s} s"
        )));
    }
    let duration = n as f64 / sample_rate_hz;
    if window_len_s > duration {
        return Err(Error::InvalidParameter(format!(
            "window of {window_len_s} s longer than signal of {duration} s"
        )));
    }
    if hop_s < 1.0 / sample_rate_hz - 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "hop of {hop_s} s is shorter than one sample"
        )));
    }

    let half = ((window_len_s * sample_rate_hz / 2.0).round() as usize).max(1);
    let length = 2 * half + 1;
    if half >= n {
        return Err(Error::InvalidParameter(format!(
            "window of {length} samples too long for signal of {n} samples"
        )));
    }
    let hop = ((hop_s * sample_rate_hz).round() as usize).max(1);
    let n_fft = padded_len(length, sample_rate_hz);

    let mut padded = Vec::with_capacity(n + 2 * half);
    padded.extend((1..=half).rev().map(|k| samples[k]));
    padded.extend_from_slice(samples);
    padded.extend((1..=half).map(|k| samples[n - 1 - k]));

    let window = hann(length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let centres: Vec<usize> = (0..n).step_by(hop).collect();
    let n_bins = n_fft / 2 + 1;

    let rows: Vec<Vec<f64>> = centres
        .par_iter()
        .map(|&c| {
            let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n_fft];
            for (slot, (x, w)) in buf.iter_mut().zip(padded[c..c + length].iter().zip(&window)) {
                *slot = Complex64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            buf[..n_bins].iter().map(|z| z.norm()).collect()
        })
        .collect();

    Ok(Spectrogram {
        magnitudes: DMatrix::from_fn(rows.len(), n_bins, |t, b| rows[t][b]),
        frame_times_s: centres.iter().map(|&c| c as f64 / sample_rate_hz).collect(),
        bin_freqs_hz: (0..n_bins).map(|k| k as f64 * sample_rate_hz / n_fft as f64).collect(),
        window: WindowDescriptor { length, hop, n_fft },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCurve {
    /// Absolute spectrogram bin index for every frame.
    pub bin_indices: Vec<usize>,
    pub lambda: f64,
    pub search_band_hz: (f64, f64),
}

/// Log-magnitudes within the band, with zeros replaced by
/// `1e-12 * max magnitude in band`.
fn band_log_magnitudes(spec: &Spectrogram, first: usize, last: usize) -> Result<DMatrix<f64>> {
    let band = spec.magnitudes.columns(first, last - first + 1);
    let peak = band.iter().fold(0.0f64, |m, &v| m.max(v));
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Numerical("spectrogram is zero inside the search band".into()));
    }
    let floor = 1e-12 * peak;
    Ok(band.map(|v| v.max(floor).ln()))
}

/// Maximises `sum_t log|S(t, c_t)| - lambda * sum_t |c_t - c_{t-1}|` over
/// all integer paths inside the band by dynamic programming. Ties go to the
/// lower bin.
pub fn extract_ridge(spec: &Spectrogram, lambda: f64, band_hz: (f64, f64)) -> Result<RidgeCurve> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    if spec.n_frames() == 0 {
        return Err(Error::InsufficientData("spectrogram has no frames".into()));
    }
    let (first, last) = spec.band_bins(band_hz).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "search band [{}, {}] Hz contains no spectrogram bins",
            band_hz.0, band_hz.1
        ))
    })?;
    let logs = band_log_magnitudes(spec, first, last)?;
    let path = ridge_path(&logs, lambda);
    Ok(RidgeCurve {
        bin_indices: path.into_iter().map(|b| b + first).collect(),
        lambda,
        search_band_hz: band_hz,
    })
}

/// Exact dynamic programme over a `frames x bins` matrix of log-magnitudes.
///
/// The transition maximum `max_b' score(b') - lambda |b - b'|` is found with
/// a forward and a backward sweep, which is exact for an L1 penalty and
/// keeps each frame linear in the number of bins.
pub fn ridge_path(logs: &DMatrix<f64>, lambda: f64) -> Vec<usize> {
    let (frames, bins) = logs.shape();
    let mut score: Vec<f64> = logs.row(0).iter().copied().collect();
    let mut back = vec![vec![0usize; bins]; frames];
    let mut fwd = vec![0usize; bins];
    let mut bwd = vec![0usize; bins];

    for t in 1..frames {
        for b in 0..bins {
            fwd[b] = if b == 0 {
                0
            } else {
                let a = fwd[b - 1];
                if score[a] - lambda * (b - a) as f64 >= score[b] {
                    a
                } else {
                    b
                }
            };
        }
        for b in (0..bins).rev() {
            bwd[b] = if b + 1 == bins {
                b
            } else {
                let a = bwd[b + 1];
                if score[a] - lambda * (a - b) as f64 > score[b] {
                    a
                } else {
                    b
                }
            };
        }
        let mut next = vec![0.0; bins];
        for b in 0..bins {
            let (f, g) = (fwd[b], bwd[b]);
            let vf = score[f] - lambda * (b - f) as f64;
            let vg = score[g] - lambda * (g - b) as f64;
            let (arg, val) = if vf >= vg { (f, vf) } else { (g, vg) };
            back[t][b] = arg;
            next[b] = logs[(t, b)] + val;
        }
        score = next;
    }

    let mut end = 0;
    for b in 1..bins {
        if score[b] > score[end] {
            end = b;
        }
    }
    let mut path = vec![0usize; frames];
    path[frames - 1] = end;
    for t in (1..frames).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// Heart rate along the ridge: `60 * f(c_t)` bpm at each frame time.
pub fn ridge_to_ihr(curve: &RidgeCurve, spec: &Spectrogram) -> Result<IhrSeries> {
    if curve.bin_indices.len() != spec.n_frames() {
        return Err(Error::DimensionMismatch(format!(
            "ridge has {} points, spectrogram {} frames",
            curve.bin_indices.len(),
            spec.n_frames()
        )));
    }
    let bpm = curve
        .bin_indices
        .iter()
        .map(|&b| {
            spec.bin_freqs_hz
                .get(b)
                .map(|f| 60.0 * f)
                .ok_or_else(|| Error::DimensionMismatch(format!("ridge bin {b} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    IhrSeries::new(spec.frame_times_s.clone(), bpm)
}
