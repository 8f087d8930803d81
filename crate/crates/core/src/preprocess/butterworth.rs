//! Digital Butterworth band-pass design as cascaded second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z2;
        let den = self.a[0] + self.a[1] * z_inv + self.a[2] * z2;
        num / den
    }

    /// Pole radii of `1 + a1 z^-1 + a2 z^-2`.
    fn pole_radii(&self) -> [f64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            let r = a2.sqrt();
            [r, r]
        } else {
            let s = disc.sqrt();
            [((-a1 + s) / 2.0).abs(), ((-a1 - s) / 2.0).abs()]
        }
    }
}

/// A cascade of biquads designed for a given sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
}

impl FilterCoefficients {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    /// Largest pole radius of the cascade.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.pole_radii())
            .fold(0.0, f64::max)
    }

    /// Share of the degrees of freedom of white noise that survive the
    /// filter: the participation ratio `(mean g)^2 / mean(g^2)` of the power
    /// gain `g = |H|^2` over `[0, fs/2]` (`|H|^4` when applied forward and
    /// backward). An ideal band-pass gives its relative bandwidth.
    pub fn noise_dof_fraction(&self, zero_phase: bool) -> f64 {
        const POINTS: usize = 8192;
        let nyquist = self.sample_rate_hz / 2.0;
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 0..POINTS {
            let f = (k as f64 + 0.5) / POINTS as f64 * nyquist;
            let p = self.response(f).norm_sqr();
            let g = if zero_phase { p * p } else { p };
            s1 += g;
            s2 += g * g;
        }
        if s2 == 0.0 {
            return 1.0;
        }
        (s1 * s1 / (s2 * POINTS as f64)).min(1.0)
    }

    /// Samples until the slowest mode of the impulse response has decayed to
    /// 1% of its initial amplitude.
    pub fn settling_samples(&self) -> usize {
        let r = self.max_pole_radius();
        if r <= 0.0 {
            return 1;
        }
        ((0.01f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Causal filtering (transposed direct form II), zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in out.iter_mut() {
                let xn = *x;
                let y = s.b[0] * xn + z1;
                z1 = s.b[1] * xn - s.a[1] * y + z2;
                z2 = s.b[2] * xn - s.a[2] * y;
                *x = y;
            }
        }
        out
    }
}

/// Designs an order-`order` Butterworth band-pass with -3 dB points at
/// `low_hz` and `high_hz`.
///
/// The analog low-pass prototype is mapped to a band-pass, then discretised
/// with the bilinear transform. Both edges are prewarped so the digital
/// cutoffs land exactly where requested, and the cascade is normalised to
/// unit gain at the (digital image of the) geometric centre frequency.
pub fn design_bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<FilterCoefficients> {
    if order == 0 {
        return Err(Error::InvalidParameter("filter order must be positive".into()));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("bad sample rate {sample_rate_hz}")));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < low cutoff < high cutoff, got {low_hz} Hz and {high_hz} Hz"
        )));
    }
    if high_hz >= nyquist {
        return Err(Error::InvalidParameter(format!(
            "high cutoff {high_hz} Hz at or beyond Nyquist {nyquist} Hz"
        )));
    }

    let k = 2.0 * sample_rate_hz;
    let w_low = k * (PI * low_hz / sample_rate_hz).tan();
    let w_high = k * (PI * high_hz / sample_rate_hz).tan();
    let bandwidth = w_high - w_low;
    let w_center = (w_low * w_high).sqrt();

    let mut complex_poles = Vec::new();
    let mut real_poles = Vec::new();
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * bandwidth / 2.0;
        let root = (half * half - w_center * w_center).sqrt();
        for s in [half + root, half - root] {
            let z = (k + s) / (k - s);
            if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
                real_poles.push(z.re);
            } else if z.im > 0.0 {
                complex_poles.push(z);
            }
        }
    }
    real_poles.sort_by(f64::total_cmp);
    if real_poles.len() % 2 != 0 || complex_poles.len() + real_poles.len() / 2 != order {
        return Err(Error::Numerical(format!(
            "pole pairing failed: {} complex pairs, {} real poles",
            complex_poles.len(),
            real_poles.len()
        )));
    }

    let numerator = [1.0, 0.0, -1.0];
    let mut sections: Vec<Biquad> = complex_poles
        .iter()
        .map(|p| Biquad {
            b: numerator,
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .chain(real_poles.chunks(2).map(|pair| Biquad {
            b: numerator,
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        }))
        .collect();
    sections.sort_by(|x, y| x.a[2].total_cmp(&y.a[2]));

    let mut coeffs = FilterCoefficients {
        sections,
        sample_rate_hz,
    };
    let digital_center = sample_rate_hz / PI * (w_center / k).atan();
    let gain = coeffs.magnitude(digital_center);
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::Numerical(format!("degenerate passband gain {gain}")));
    }
    let per_section = gain.powf(-1.0 / order as f64);
    for s in &mut coeffs.sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study_filter() -> FilterCoefficients {
        design_bandpass(5, 0.4, 5.0, 58.0).unwrap()
    }

    #[test]
    fn five_sections_stable() {
        let f = study_filter();
        assert_eq!(f.sections.len(), 5);
        assert!(f.max_pole_radius() < 1.0);
    }

    #[test]
    fn cutoffs_are_half_power() {
        let f = study_filter();
        for fc in [0.4, 5.0] {
            let db = f.magnitude_db(fc);
            assert!((db + 3.0103).abs() < 0.1, "{fc} Hz: {db} dB");
        }
    }

    #[test]
    fn centre_gain_and_dc() {
        let f = study_filter();
        let centre = (0.4f64 * 5.0).sqrt();
        assert!(f.magnitude_db(centre).abs() < 0.2);
        assert!(f.magnitude(0.0) < 1e-12);
        assert!(f.magnitude(29.0 - 1e-9) < 1e-6);
    }

    #[test]
    fn passband_is_maximally_flat() {
        // Squared magnitude of an analog Butterworth band-pass under the
        // bilinear map: 1 / (1 + ((W^2 - W0^2) / (W B))^(2N)).
        let f = study_filter();
        let fs = 58.0;
        let warp = |hz: f64| 2.0 * fs * (PI * hz / fs).tan();
        let (wl, wh) = (warp(0.4), warp(5.0));
        let (w0sq, bw) = (wl * wh, wh - wl);
        for hz in [0.2, 0.7, 1.2, 2.5, 4.0, 7.0, 12.0] {
            let w = warp(hz);
            let x = (w * w - w0sq) / (w * bw);
            let expected = (1.0 / (1.0 + x.powi(10))).sqrt();
            assert!((f.magnitude(hz) - expected).abs() < 1e-9, "{hz} Hz");
        }
    }

    #[test]
    fn rejects_bad_cutoffs() {
        assert!(design_bandpass(5, 0.4, 29.0, 58.0).is_err());
        assert!(design_bandpass(5, 5.0, 0.4, 58.0).is_err());
        assert!(design_bandpass(5, 0.0, 5.0, 58.0).is_err());
        assert!(design_bandpass(0, 0.4, 5.0, 58.0).is_err());
    }

    #[test]
    fn even_order_designs_too() {
        let f = design_bandpass(4, 1.0, 3.0, 50.0).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!((f.magnitude_db(1.0) + 3.0103).abs() < 1e-6);
        assert!((f.magnitude_db(3.0) + 3.0103).abs() < 1e-6);
    }
}
