//! Spectral signal quality index and greedy accumulation of the retained
//! temporal sources into a pulse waveform.

use std::fmt::Write as _;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::decomposition::SourceDecomposition;
use crate::error::{Error, Result};
use crate::model::AcquisitionMeta;
use crate::spectrum::{magnitude_spectrum, power_of_two_normalizer, MagnitudeSpectrum};

/// Physiological heart-rate band, 40-200 bpm, in Hz.
pub const PULSE_BAND_HZ: (f64, f64) = (40.0 / 60.0, 200.0 / 60.0);

/// Quality index of an already computed spectrum.
pub fn sqi_of_spectrum(spectrum: &MagnitudeSpectrum, pulse_freq_hz: f64) -> Result<f64> {
    let num = spectrum.band_integral(0.75 * pulse_freq_hz, 1.25 * pulse_freq_hz);
    let den = spectrum.band_integral(0.5 * pulse_freq_hz, 2.0 * pulse_freq_hz);
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::UndefinedScore(format!(
            "no spectral magnitude between {} and {} Hz",
            0.5 * pulse_freq_hz,
            2.0 * pulse_freq_hz
        )));
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Fraction of the spectral magnitude in `[3/4 f_p, 5/4 f_p]` relative to
/// `[1/2 f_p, 2 f_p]`.
pub fn sqi(x: &[f64], pulse_freq_hz: f64, sample_rate_hz: f64) -> Result<f64> {
    sqi_with_planner(x, pulse_freq_hz, sample_rate_hz, &mut FftPlanner::new())
}

fn check_sqi_args(x: &[f64], pulse_freq_hz: f64, sample_rate_hz: f64) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("quality index needs at least two samples".into()));
    }
    if !(pulse_freq_hz > 0.0 && pulse_freq_hz.is_finite()) {
        return Err(Error::InvalidParameter(format!("pulse frequency must be positive, got {pulse_freq_hz}")));
    }
    if 2.0 * pulse_freq_hz >= sample_rate_hz / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "2 x pulse frequency ({} Hz) must lie below Nyquist ({} Hz)",
            2.0 * pulse_freq_hz,
            sample_rate_hz / 2.0
        )));
    }
    Ok(())
}

fn sqi_with_planner(x: &[f64], pulse_freq_hz: f64, sample_rate_hz: f64, planner: &mut FftPlanner<f64>) -> Result<f64> {
    check_sqi_args(x, pulse_freq_hz, sample_rate_hz)?;
    sqi_of_spectrum(&magnitude_spectrum(x, sample_rate_hz, planner), pulse_freq_hz)
}

/// Peak of the singular-value-weighted aggregate magnitude spectrum of the
/// retained right vectors, searched within `band_hz`.
pub fn estimate_pulse_freq(decomp: &SourceDecomposition, band_hz: (f64, f64)) -> Result<f64> {
    if decomp.retained_rank == 0 {
        return Err(Error::NoSources("cannot estimate pulse frequency from an empty source set".into()));
    }
    let rows: Vec<Vec<f64>> = (0..decomp.retained_rank).map(|i| decomp.right_vector(i)).collect();
    pulse_freq_from_sources(&rows, &decomp.singular_values[..decomp.retained_rank], decomp.meta.sample_rate_hz, band_hz)
}

/// Same as [`estimate_pulse_freq`] for explicit sources and weights.
pub fn pulse_freq_from_sources(
    sources: &[Vec<f64>],
    weights: &[f64],
    sample_rate_hz: f64,
    band_hz: (f64, f64),
) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::NoSources("no sources to estimate pulse frequency from".into()));
    }
    let (lo, hi) = band_hz;
    if !(0.0 < lo && lo < hi && hi < sample_rate_hz / 2.0) {
        return Err(Error::InvalidParameter(format!("bad pulse search band [{lo}, {hi}] Hz")));
    }
    let mut planner = FftPlanner::new();
    let mut aggregate: Option<MagnitudeSpectrum> = None;
    for (src, &w) in sources.iter().zip(weights) {
        let spec = magnitude_spectrum(src, sample_rate_hz, &mut planner);
        let factor = w / power_of_two_normalizer(src);
        match aggregate.as_mut() {
            None => {
                let mut first = spec;
                first.magnitudes.iter_mut().for_each(|m| *m *= factor);
                aggregate = Some(first);
            }
            Some(acc) => {
                for (a, m) in acc.magnitudes.iter_mut().zip(&spec.magnitudes) {
                    *a += factor * m;
                }
            }
        }
    }
    let agg = aggregate.expect("at least one source");
    let (first, last) = agg
        .bin_range(lo, hi)
        .ok_or_else(|| Error::InvalidParameter("pulse band contains no frequency bins".into()))?;
    let best = (first..=last).fold(first, |best, k| {
        if agg.magnitudes[k] > agg.magnitudes[best] {
            k
        } else {
            best
        }
    });
    Ok(agg.freq(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    /// Pick each source's sign to maximise the cumulative quality.
    Greedy,
    /// Use the singular vectors as returned.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulateOptions {
    pub sign_mode: SignMode,
    /// Scale each source by its singular value before summing.
    pub weight_by_sigma: bool,
}

impl Default for AccumulateOptions {
    fn default() -> Self {
        AccumulateOptions {
            sign_mode: SignMode::Greedy,
            weight_by_sigma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedSources {
    /// Quality of each retained source, indexed by source (not rank).
    pub scores: Vec<f64>,
    /// Source indices ordered by non-increasing quality.
    pub permutation: Vec<usize>,
    /// Number of ranked sources summed into the waveform.
    pub cutoff: usize,
    /// Sign applied to each source, in rank order.
    pub signs: Vec<f64>,
    /// Quality of the partial sum after each rank position.
    pub cumulative_scores: Vec<f64>,
    pub pulse_freq_hz: f64,
}

impl RankedSources {
    /// `rank,source,sqi,sign,cumulative_sqi,included` table.
    pub fn table(&self) -> String {
        let mut out = String::from("rank,source,sqi,sign,cumulative_sqi,included\n");
        for (r, &src) in self.permutation.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r + 1,
                src + 1,
                self.scores[src],
                self.signs[r],
                self.cumulative_scores[r],
                u8::from(r < self.cutoff)
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgSignal {
    pub samples: Vec<f64>,
    pub meta: AcquisitionMeta,
    pub quality: f64,
}

/// Ranks the retained right vectors of `decomp` by quality and sums them in
/// that order, stopping at the prefix with the highest quality.
pub fn rank_and_accumulate(
    decomp: &SourceDecomposition,
    pulse_freq_hz: f64,
    options: AccumulateOptions,
) -> Result<(RankedSources, PpgSignal)> {
    rank_and_accumulate_weighted(decomp, &decomp.singular_values, pulse_freq_hz, options)
}

/// As [`rank_and_accumulate`], with explicit per-source weights used when
/// `options.weight_by_sigma` is set (e.g. shrunk singular values).
pub fn rank_and_accumulate_weighted(
    decomp: &SourceDecomposition,
    weights: &[f64],
    pulse_freq_hz: f64,
    options: AccumulateOptions,
) -> Result<(RankedSources, PpgSignal)> {
    let k = decomp.retained_rank;
    if k == 0 {
        return Err(Error::NoSources("no singular components above the noise edge".into()));
    }
    let sources: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let v = decomp.right_vector(i);
            if options.weight_by_sigma {
                v.iter().map(|x| x * weights[i]).collect()
            } else {
                v
            }
        })
        .collect();
    let (ranked, samples) = accumulate_sources(&sources, pulse_freq_hz, decomp.meta.sample_rate_hz, options.sign_mode)?;
    let quality = ranked.cumulative_scores[ranked.cutoff - 1];
    Ok((
        ranked,
        PpgSignal {
            samples,
            meta: decomp.meta.clone(),
            quality,
        },
    ))
}

/// Core of the accumulation over explicit source signals. Returns the ranking
/// and the accumulated waveform.
pub fn accumulate_sources(
    sources: &[Vec<f64>],
    pulse_freq_hz: f64,
    sample_rate_hz: f64,
    sign_mode: SignMode,
) -> Result<(RankedSources, Vec<f64>)> {
    if sources.is_empty() {
        return Err(Error::NoSources("no sources to accumulate".into()));
    }
    let n = sources[0].len();
    if sources.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("sources differ in length".into()));
    }
    check_sqi_args(&sources[0], pulse_freq_hz, sample_rate_hz)?;
    let mut planner = FftPlanner::new();

    let mut defined = 0usize;
    let scores: Vec<f64> = sources
        .iter()
        .map(|s| match sqi_with_planner(s, pulse_freq_hz, sample_rate_hz, &mut planner) {
            Ok(q) => {
                defined += 1;
                Ok(q)
            }
            Err(Error::UndefinedScore(_)) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    if defined == 0 {
        return Err(Error::UndefinedScore(format!(
            "none of the {} sources has spectral content near {pulse_freq_hz} Hz",
            sources.len()
        )));
    }

    let mut permutation: Vec<usize> = (0..sources.len()).collect();
    permutation.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let score_or_zero = |x: &[f64], planner: &mut FftPlanner<f64>| -> Result<f64> {
        match sqi_with_planner(x, pulse_freq_hz, sample_rate_hz, planner) {
            Ok(q) => Ok(q),
            Err(Error::UndefinedScore(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };

    let first = permutation[0];
    let mut sum = sources[first].clone();
    let mut signs = vec![1.0];
    let mut cumulative = vec![scores[first]];
    let mut prefixes = vec![sum.clone()];
    for &idx in &permutation[1..] {
        let src = &sources[idx];
        let plus: Vec<f64> = sum.iter().zip(src).map(|(a, b)| a + b).collect();
        let q_plus = score_or_zero(&plus, &mut planner)?;
        let (sign, next, q) = match sign_mode {
            SignMode::Off => (1.0, plus, q_plus),
            SignMode::Greedy => {
                let minus: Vec<f64> = sum.iter().zip(src).map(|(a, b)| a - b).collect();
                let q_minus = score_or_zero(&minus, &mut planner)?;
                if q_minus > q_plus {
                    (-1.0, minus, q_minus)
                } else {
                    (1.0, plus, q_plus)
                }
            }
        };
        signs.push(sign);
        cumulative.push(q);
        sum = next;
        prefixes.push(sum.clone());
    }

    let best = (0..cumulative.len()).fold(0, |best, j| if cumulative[j] > cumulative[best] { j } else { best });
    let samples = prefixes.swap_remove(best);
    Ok((
        RankedSources {
            scores,
            permutation,
            cutoff: best + 1,
            signs,
            cumulative_scores: cumulative,
            pulse_freq_hz,
        },
        samples,
    ))
}
