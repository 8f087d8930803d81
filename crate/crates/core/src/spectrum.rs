//! One-sided magnitude spectra and band integrals.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Frequency resolution targeted by the zero-padded transforms, in Hz.
pub const TARGET_BIN_HZ: f64 = 0.01;

/// Smallest power of two that is at least `len` and gives a bin spacing of
/// at most [`TARGET_BIN_HZ`].
pub fn padded_len(len: usize, sample_rate_hz: f64) -> usize {
    let min_bins = (sample_rate_hz / TARGET_BIN_HZ).ceil() as usize;
    len.max(min_bins).next_power_of_two()
}

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos()).collect()
}

/// A one-sided magnitude spectrum on the grid `k * bin_hz`, `k = 0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    pub magnitudes: Vec<f64>,
    pub bin_hz: f64,
}

impl MagnitudeSpectrum {
    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }

    /// Integral of the piecewise-linear interpolant of the magnitudes over
    /// `[lo, hi]` (trapezoidal rule with linearly interpolated band edges).
    pub fn band_integral(&self, lo: f64, hi: f64) -> f64 {
        band_integral(&self.magnitudes, self.bin_hz, lo, hi)
    }

    /// Bin range `[first, last]` whose centre frequencies lie in `[lo, hi]`.
    pub fn bin_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let first = (lo / self.bin_hz).ceil().max(0.0) as usize;
        let last = ((hi / self.bin_hz).floor() as usize).min(self.magnitudes.len() - 1);
        (first <= last).then_some((first, last))
    }
}

pub fn band_integral(mags: &[f64], bin_hz: f64, lo: f64, hi: f64) -> f64 {
    if mags.len() < 2 || hi <= lo {
        return 0.0;
    }
    let value_at = |f: f64| {
        let pos = f / bin_hz;
        let k = (pos.floor() as usize).min(mags.len() - 2);
        let frac = pos - k as f64;
        mags[k] + (mags[k + 1] - mags[k]) * frac
    };
    let top = (mags.len() - 1) as f64 * bin_hz;
    let (lo, hi) = (lo.max(0.0), hi.min(top));
    if hi <= lo {
        return 0.0;
    }
    let first = (lo / bin_hz).floor() as usize;
    let last = ((hi / bin_hz).ceil() as usize).min(mags.len() - 1);
    let mut total = 0.0;
    for k in first..last {
        let a = (k as f64 * bin_hz).max(lo);
        let b = ((k + 1) as f64 * bin_hz).min(hi);
        if b > a {
            total += 0.5 * (b - a) * (value_at(a) + value_at(b));
        }
    }
    total
}

// Multiplying by a power of two is exact, so scaling the input by any such
// factor (or flipping its sign) leaves the normalised samples bit-identical.
pub(crate) fn power_of_two_normalizer(x: &[f64]) -> f64 {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !peak.is_normal() {
        return 1.0;
    }
    let exponent = ((peak.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    2f64.powi(-exponent)
}

/// Hann-tapered, zero-padded magnitude spectrum of `x` after mean removal.
///
/// The input is first normalised by a power of two, which makes the result
/// depend on `x` only up to scale.
pub fn magnitude_spectrum(x: &[f64], sample_rate_hz: f64, planner: &mut FftPlanner<f64>) -> MagnitudeSpectrum {
    let n = x.len();
    let n_fft = padded_len(n, sample_rate_hz);
    let norm = power_of_two_normalizer(x);
    let scaled: Vec<f64> = x.iter().map(|v| v * norm).collect();
    let mean = scaled.iter().sum::<f64>() / n as f64;
    let window = hann(n);
    let mut buf: Vec<Complex64> = scaled
        .iter()
        .zip(&window)
        .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    planner.plan_fft_forward(n_fft).process(&mut buf);
    MagnitudeSpectrum {
        magnitudes: buf[..=n_fft / 2].iter().map(|c| c.norm()).collect(),
        bin_hz: sample_rate_hz / n_fft as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_integral_of_constant() {
        let mags = vec![2.0; 101];
        let v = band_integral(&mags, 0.1, 0.35, 1.72);
        assert!((v - 2.0 * 1.37).abs() < 1e-12);
    }

    #[test]
    fn band_integral_of_ramp_is_exact() {
        let mags: Vec<f64> = (0..50).map(|k| k as f64 * 0.5).collect();
        let df = 0.2;
        // magnitude as a function of f is 2.5 f
        let (lo, hi) = (0.33, 4.71);
        let exact = 1.25 * (hi * hi - lo * lo);
        assert!((band_integral(&mags, df, lo, hi) - exact).abs() < 1e-12);
    }

    #[test]
    fn padded_len_reaches_resolution() {
        let n = padded_len(580, 58.0);
        assert!(58.0 / n as f64 <= TARGET_BIN_HZ);
        assert!(n.is_power_of_two());
    }

    #[test]
    fn tone_peaks_at_its_frequency() {
        let fs = 58.0;
        let x: Vec<f64> = (0..2000).map(|j| (2.0 * PI * 1.37 * j as f64 / fs).sin()).collect();
        let s = magnitude_spectrum(&x, fs, &mut FftPlanner::new());
        let k = (0..s.magnitudes.len())
            .max_by(|&a, &b| s.magnitudes[a].total_cmp(&s.magnitudes[b]))
            .unwrap();
        assert!((s.freq(k) - 1.37).abs() <= s.bin_hz);
    }
}
