//! Seeded forward-model generator `Y = A X + sigma Z` with a known heart-rate
//! trajectory.
//!
//! Every source row is scaled to unit RMS over the record before its
//! amplitude is applied, so with i.i.d. standard-normal mixing the expected
//! per-channel signal power is the sum of squared amplitudes.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionMeta, ChannelMatrix, IhrSeries, MAX_BPM};

/// Recorded in dataset sidecars; datasets are reproducible only under the
/// same generator.
pub const GENERATOR_ID: &str = "chacha8-standard-normal (rand_chacha 0.9, rand_distr 0.5)";

fn default_harmonics() -> Vec<f64> {
    vec![1.0, 0.4, 0.2]
}

fn default_drift_period() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    /// Linear chirp in heart rate with a harmonic series on top of the
    /// fundamental.
    HemodynamicChirp {
        bpm_start: f64,
        bpm_end: f64,
        #[serde(default = "default_harmonics")]
        harmonics: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    Respiration {
        rate_bpm: f64,
        #[serde(default)]
        phase: f64,
    },
    BaselineDrift {
        #[serde(default = "default_drift_period")]
        period_s: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Gaussian noise confined to `[start_s, start_s + duration_s)`.
    NoiseBurst { start_s: f64, duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub amplitude: f64,
    #[serde(flatten)]
    pub kind: SourceKind,
}

fn default_label() -> String {
    "synthetic".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default = "default_label")]
    pub source_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_regions: usize,
    pub mixing_seed: u64,
    pub noise_sigma: f64,
    pub meta: SyntheticMeta,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
}

impl MixtureSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: MixtureSpec =
            toml::from_str(text).map_err(|e| Error::Validation(format!("mixture spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mixture spec serialises")
    }

    pub fn acquisition_meta(&self) -> Result<AcquisitionMeta> {
        AcquisitionMeta::from_duration(self.meta.sample_rate_hz, self.meta.duration_s, self.meta.source_label.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let meta = self.acquisition_meta()?;
        if self.n_regions == 0 {
            return Err(Error::InvalidParameter("n_regions must be positive".into()));
        }
        if self.sources.len() > self.n_regions.min(meta.frame_count) {
            return Err(Error::InvalidParameter(format!(
                "{} sources exceed min(n_regions, frames) = {}",
                self.sources.len(),
                self.n_regions.min(meta.frame_count)
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let nyquist = meta.nyquist_hz();
        for (k, s) in self.sources.iter().enumerate() {
            let bad = |what: String| Err(Error::InvalidParameter(format!("source {k}: {what}")));
            if !s.amplitude.is_finite() {
                return bad("amplitude must be finite".into());
            }
            match &s.kind {
                SourceKind::HemodynamicChirp { bpm_start, bpm_end, harmonics, phase } => {
                    for bpm in [bpm_start, bpm_end] {
                        if !(*bpm > 0.0 && *bpm < MAX_BPM) {
                            return bad(format!("chirp rate {bpm} bpm outside (0, {MAX_BPM})"));
                        }
                    }
                    if harmonics.is_empty() || harmonics.iter().any(|h| !h.is_finite()) || !phase.is_finite() {
                        return bad("chirp needs finite harmonic amplitudes and phase".into());
                    }
                    let top = bpm_start.max(*bpm_end) / 60.0 * harmonics.len() as f64;
                    if top >= nyquist {
                        return bad(format!("highest harmonic {top} Hz at or above Nyquist {nyquist} Hz"));
                    }
                }
                SourceKind::Respiration { rate_bpm, phase } => {
                    if !(*rate_bpm > 0.0 && rate_bpm / 60.0 < nyquist) || !phase.is_finite() {
                        return bad(format!("respiration rate {rate_bpm} bpm invalid"));
                    }
                }
                SourceKind::BaselineDrift { period_s, phase } => {
                    if !(period_s.is_finite() && *period_s > 2.0 / meta.sample_rate_hz) || !phase.is_finite() {
                        return bad(format!("drift period {period_s} s invalid"));
                    }
                }
                SourceKind::NoiseBurst { start_s, duration_s } => {
                    let frames = burst_frames(*start_s, *duration_s, &meta);
                    if !(start_s.is_finite() && duration_s.is_finite()) || frames.is_empty() {
                        return bad("noise burst covers no frames".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn has_hemodynamic_source(&self) -> bool {
        self.sources.iter().any(|s| matches!(s.kind, SourceKind::HemodynamicChirp { .. }))
    }
}

fn burst_frames(start_s: f64, duration_s: f64, meta: &AcquisitionMeta) -> std::ops::Range<usize> {
    let fs = meta.sample_rate_hz;
    let first = (start_s * fs).ceil().max(0.0) as usize;
    let last = (((start_s + duration_s) * fs).ceil().max(0.0) as usize).min(meta.frame_count);
    first.min(last)..last
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub channels: ChannelMatrix,
    /// Chirp heart rate at every frame; `None` without a hemodynamic source.
    pub truth: Option<IhrSeries>,
    /// `n_s x n_t`, already scaled by the amplitudes.
    pub sources: DMatrix<f64>,
    /// `n_r x n_s`.
    pub mixing: DMatrix<f64>,
}

impl SyntheticDataset {
    pub fn require_truth(&self) -> Result<&IhrSeries> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::Validation("mixture has no hemodynamic source, so no ground-truth heart rate".into()))
    }
}

fn unit_rms(mut x: Vec<f64>) -> Result<Vec<f64>> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::InvalidParameter("source is identically zero over the record".into()));
    }
    x.iter_mut().for_each(|v| *v /= rms);
    Ok(x)
}

fn source_row(kind: &SourceKind, k: usize, seed: u64, meta: &AcquisitionMeta) -> Result<Vec<f64>> {
    let n = meta.frame_count;
    let t = |j: usize| meta.frame_time(j);
    let row = match kind {
        SourceKind::HemodynamicChirp { bpm_start, bpm_end, harmonics, phase } => {
            let (f0, f1) = (bpm_start / 60.0, bpm_end / 60.0);
            let span = meta.duration_s;
            (0..n)
                .map(|j| {
                    let tj = t(j);
                    let theta = 2.0 * PI * (f0 * tj + 0.5 * (f1 - f0) * tj * tj / span) + phase;
                    harmonics
                        .iter()
                        .enumerate()
                        .map(|(h, a)| a * ((h + 1) as f64 * theta).sin())
                        .sum()
                })
                .collect()
        }
        SourceKind::Respiration { rate_bpm, phase } => {
            (0..n).map(|j| (2.0 * PI * rate_bpm / 60.0 * t(j) + phase).sin()).collect()
        }
        SourceKind::BaselineDrift { period_s, phase } => {
            (0..n).map(|j| (2.0 * PI * t(j) / period_s + phase).sin()).collect()
        }
        SourceKind::NoiseBurst { start_s, duration_s } => {
            // Each burst draws from its own stream so adding one does not
            // perturb the mixing matrix or the background noise.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut row = vec![0.0; n];
            for v in &mut row[burst_frames(*start_s, *duration_s, meta)] {
                *v = StandardNormal.sample(&mut rng);
            }
            let active = burst_frames(*start_s, *duration_s, meta).len() as f64;
            // unit RMS inside the burst rather than over the record
            return Ok(unit_rms(row)?.into_iter().map(|v| v * (active / n as f64).sqrt()).collect());
        }
    };
    unit_rms(row)
}

/// Chirp heart rate `60 * f(t)` at every frame time.
pub fn ground_truth_ihr(spec: &MixtureSpec) -> Result<IhrSeries> {
    let meta = spec.acquisition_meta()?;
    let Some((bpm_start, bpm_end)) = spec.sources.iter().find_map(|s| match s.kind {
        SourceKind::HemodynamicChirp { bpm_start, bpm_end, .. } => Some((bpm_start, bpm_end)),
        _ => None,
    }) else {
        return Err(Error::Validation("mixture has no hemodynamic source, so no ground-truth heart rate".into()));
    };
    let times: Vec<f64> = (0..meta.frame_count).map(|j| meta.frame_time(j)).collect();
    let bpm = times
        .iter()
        .map(|t| bpm_start + (bpm_end - bpm_start) * t / meta.duration_s)
        .collect();
    IhrSeries::new(times, bpm)
}

/// Draws the mixture. The mixing matrix is drawn first (row-major), then the
/// noise (row-major), from one ChaCha8 stream seeded with `mixing_seed`.
pub fn generate(spec: &MixtureSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let meta = spec.acquisition_meta()?;
    let (n_r, n_t, n_s) = (spec.n_regions, meta.frame_count, spec.sources.len());

    let mut sources = DMatrix::zeros(n_s, n_t);
    for (k, s) in spec.sources.iter().enumerate() {
        let row = source_row(&s.kind, k, spec.mixing_seed, &meta)?;
        for (j, v) in row.into_iter().enumerate() {
            sources[(k, j)] = s.amplitude * v;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.mixing_seed);
    let mut mixing = DMatrix::zeros(n_r, n_s);
    for i in 0..n_r {
        for k in 0..n_s {
            mixing[(i, k)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut values = &mixing * &sources;
    for i in 0..n_r {
        for j in 0..n_t {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i, j)] += spec.noise_sigma * z;
        }
    }

    let truth = if spec.has_hemodynamic_source() {
        Some(ground_truth_ihr(spec)?)
    } else {
        None
    };
    Ok(SyntheticDataset {
        channels: ChannelMatrix::new(values, meta)?,
        truth,
        sources,
        mixing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chirp_spec(sigma: f64) -> MixtureSpec {
        MixtureSpec {
            n_regions: 12,
            mixing_seed: 3,
            noise_sigma: sigma,
            meta: SyntheticMeta { sample_rate_hz: 58.0, duration_s: 60.0, source_label: "t".into() },
            sources: vec![SourceSpec {
                amplitude: 1.0,
                kind: SourceKind::HemodynamicChirp {
                    bpm_start: 60.0,
                    bpm_end: 90.0,
                    harmonics: default_harmonics(),
                    phase: 0.0,
                },
            }],
        }
    }

    #[test]
    fn noiseless_single_source_channels_are_multiples() {
        let d = generate(&chirp_spec(0.0)).unwrap();
        let x = d.sources.row(0);
        for i in 0..d.channels.n_regions() {
            let row = d.channels.values().row(i);
            let c = d.mixing[(i, 0)];
            assert!((row - x * c).amax() < 1e-12);
        }
    }

    #[test]
    fn truth_midpoint() {
        let truth = ground_truth_ihr(&chirp_spec(1.0)).unwrap();
        assert_eq!(truth.len(), 3480);
        assert!((truth.value_at(30.0).unwrap() - 75.0).abs() < 1e-12);
        assert!((truth.bpm()[0] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let a = generate(&chirp_spec(1.0)).unwrap();
        let b = generate(&chirp_spec(1.0)).unwrap();
        assert_eq!(a.channels, b.channels);
        let mut other = chirp_spec(1.0);
        other.mixing_seed = 4;
        assert_ne!(generate(&other).unwrap().channels, a.channels);
    }

    #[test]
    fn no_chirp_no_truth() {
        let mut spec = chirp_spec(1.0);
        spec.sources[0].kind = SourceKind::Respiration { rate_bpm: 15.0, phase: 0.0 };
        let d = generate(&spec).unwrap();
        assert!(d.truth.is_none());
        assert!(d.require_truth().is_err());
        assert!(ground_truth_ihr(&spec).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            n_regions = 20
            mixing_seed = 1
            noise_sigma = 1.0
            [meta]
            sample_rate_hz = 58
            duration_s = 10
            [[sources]]
            kind = "hemodynamic-chirp"
            amplitude = 0.6
            bpm_start = 60
            bpm_end = 90
            [[sources]]
            kind = "baseline-drift"
            amplitude = 0.5
            [[sources]]
            kind = "noise-burst"
            amplitude = 2.0
            start_s = 2.0
            duration_s = 1.5
        "#;
        let spec = MixtureSpec::from_toml(text).unwrap();
        assert_eq!(spec.meta.source_label, "synthetic");
        assert_eq!(spec.sources.len(), 3);
        assert_eq!(MixtureSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = chirp_spec(1.0);
        s.noise_sigma = -1.0;
        assert!(generate(&s).is_err());
        let mut s = chirp_spec(1.0);
        s.n_regions = 0;
        assert!(s.validate().is_err());
        let mut s = chirp_spec(1.0);
        s.sources[0].kind = SourceKind::HemodynamicChirp {
            bpm_start: 0.0,
            bpm_end: 90.0,
            harmonics: vec![1.0],
            phase: 0.0,
        };
        assert!(s.validate().is_err());
        let mut s = chirp_spec(1.0);
        s.sources[0].kind = SourceKind::NoiseBurst { start_s: 100.0, duration_s: 1.0 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn burst_is_confined() {
        let mut s = chirp_spec(0.0);
        s.sources[0] = SourceSpec { amplitude: 1.0, kind: SourceKind::NoiseBurst { start_s: 10.0, duration_s: 5.0 } };
        let d = generate(&s).unwrap();
        let row = d.sources.row(0);
        assert!(row.iter().take(580).all(|&v| v == 0.0));
        assert!(row.iter().skip(870).all(|&v| v == 0.0));
        let inside: Vec<f64> = row.iter().skip(580).take(290).copied().collect();
        let rms = (inside.iter().map(|v| v * v).sum::<f64>() / inside.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }
}
