//! End-to-end composition: band-pass, decomposition, source ranking and
//! accumulation, spectrogram ridge, heart rate.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::decomposition::{self, SourceDecomposition};
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::EvalOptions;
use crate::model::{ChannelMatrix, FacialArea, IhrSeries, RegionMesh};
use crate::preprocess::{self, FilterSpec};
use crate::reconstruction::{self, AccumulateOptions, PpgSignal, RankedSources, SignMode, PULSE_BAND_HZ};
use crate::timefreq::{self, RidgeCurve, Spectrogram};

/// How the noise bulk is modelled when counting retained components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// i.i.d. noise over all `n_t` frames.
    White,
    /// White noise seen through the band-pass, with the frame count reduced
    /// to the filter's effective degrees of freedom. Only applied when the
    /// pipeline runs the filter itself; pre-filtered input falls back to
    /// the white model.
    Filtered,
}

/// Every tunable of a run. Missing keys in a config file take these
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterSpec,
    pub noise_model: NoiseModel,
    /// Skip the spectral estimate and use this pulse frequency.
    pub f_p_override_hz: Option<f64>,
    /// Weight sources by their shrunk singular values and keep the denoised
    /// matrix.
    pub use_shrinkage: bool,
    pub sqi_sign_mode: SignMode,
    pub weight_by_sigma: bool,
    pub stft_window_s: f64,
    pub stft_hop_s: f64,
    pub lambda: f64,
    pub search_low_bpm: f64,
    pub search_high_bpm: f64,
    /// Step of the uniform grid the heart rate is interpolated onto.
    pub ihr_grid_s: f64,
    pub granularities_s: Vec<f64>,
    pub relative_granularity_s: f64,
    pub lag_search: bool,
    /// Keep only mesh regions in this facial area; needs a mesh.
    pub area: Option<FacialArea>,
    pub mesh_path: Option<PathBuf>,
    pub dump_spectrogram: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter: FilterSpec::default(),
            noise_model: NoiseModel::Filtered,
            f_p_override_hz: None,
            use_shrinkage: false,
            sqi_sign_mode: SignMode::Greedy,
            weight_by_sigma: false,
            stft_window_s: 10.0,
            stft_hop_s: 1.0,
            lambda: DEFAULT_LAMBDA,
            search_low_bpm: 40.0,
            search_high_bpm: 200.0,
            ihr_grid_s: 1.0,
            granularities_s: vec![1.0, 10.0, 30.0],
            relative_granularity_s: 30.0,
            lag_search: false,
            area: None,
            mesh_path: None,
            dump_spectrogram: false,
            output_dir: None,
        }
    }
}

/// Ridge smoothness penalty, per unit log-magnitude per bin step. Bins are
/// about 0.4 bpm apart at 58 Hz, so a 12 bpm jump between frames costs a
/// factor of about 4.5 in magnitude.
pub const DEFAULT_LAMBDA: f64 = 0.05;

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn search_band_hz(&self) -> (f64, f64) {
        (self.search_low_bpm / 60.0, self.search_high_bpm / 60.0)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            granularities_s: self.granularities_s.clone(),
            relative_granularity_s: self.relative_granularity_s,
            lag_search: self.lag_search,
        }
    }

    /// Checks that do not depend on the data; sample-rate dependent limits
    /// are checked by the stages themselves.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("stft_window_s", self.stft_window_s)?;
        positive("stft_hop_s", self.stft_hop_s)?;
        positive("ihr_grid_s", self.ihr_grid_s)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0 < self.search_low_bpm && self.search_low_bpm < self.search_high_bpm) {
            return Err(Error::InvalidParameter(format!(
                "search band [{}, {}] bpm is empty",
                self.search_low_bpm, self.search_high_bpm
            )));
        }
        if let Some(f) = self.f_p_override_hz {
            positive("f_p_override_hz", f)?;
        }
        if self.area.is_some() && self.mesh_path.is_none() {
            return Err(Error::InvalidParameter("area selection needs a mesh".into()));
        }
        self.eval_options().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Select,
    Filter,
    Decompose,
    Reconstruct,
    TimeFrequency,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Select => "region selection",
            Stage::Filter => "band-pass",
            Stage::Decompose => "decomposition",
            Stage::Reconstruct => "reconstruction",
            Stage::TimeFrequency => "time-frequency",
        })
    }
}

/// A pipeline error labelled with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    pub fn class(&self) -> ErrorClass {
        self.error.class()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub decomposition: SourceDecomposition,
    /// Present when shrinkage ran and the noise estimate was usable.
    pub denoised: Option<ChannelMatrix>,
    pub pulse_freq_hz: f64,
    pub ranked: RankedSources,
    pub ppg: PpgSignal,
    pub spectrogram: Spectrogram,
    pub ridge: RidgeCurve,
    /// Heart rate at the spectrogram frame times.
    pub ihr_frames: IhrSeries,
    /// Heart rate on the uniform output grid.
    pub ihr: IhrSeries,
}

/// Runs the full pipeline on a raw (or already band-passed) channel matrix.
pub fn run_pipeline(
    channels: &ChannelMatrix,
    mesh: Option<&RegionMesh>,
    config: &PipelineConfig,
) -> std::result::Result<PipelineOutput, StageError> {
    config.validate().at(Stage::Select)?;

    let selected;
    let channels = match config.area {
        Some(area) => {
            let mesh = mesh
                .ok_or_else(|| Error::InvalidParameter("area selection needs a mesh".into()))
                .at(Stage::Select)?;
            if mesh.len() != channels.n_regions() {
                return Err(Error::DimensionMismatch(format!(
                    "mesh has {} regions, channel matrix {} rows",
                    mesh.len(),
                    channels.n_regions()
                )))
                .at(Stage::Select);
            }
            let rows = mesh.rows_in_area(area);
            if rows.is_empty() {
                return Err(Error::Validation(format!("mesh has no regions labelled {area}"))).at(Stage::Select);
            }
            selected = channels.select_rows(&rows).at(Stage::Select)?;
            &selected
        }
        None => channels,
    };

    let filtered_storage;
    let mut effective_frames = channels.n_frames() as f64;
    let filtered = if channels.is_filtered() {
        channels
    } else {
        filtered_storage = preprocess::bandpass(channels, &config.filter).at(Stage::Filter)?;
        if config.noise_model == NoiseModel::Filtered {
            effective_frames = config
                .filter
                .effective_frames(channels.meta().sample_rate_hz, channels.n_frames())
                .at(Stage::Filter)?;
        }
        &filtered_storage
    };

    let decomp = decomposition::svd_with_effective_frames(filtered, effective_frames).at(Stage::Decompose)?;
    let k = decomp.retained_rank;
    if k == 0 {
        return Err(Error::NoSources(format!(
            "no singular value above the noise edge {:.4} (noise sigma {:.4e})",
            decomp.threshold(),
            decomp.noise_sigma()
        )))
        .at(Stage::Decompose);
    }

    let (weights, denoised) = if config.use_shrinkage {
        let shrink = decomposition::optimal_shrink(&decomp);
        if shrink.degenerate {
            (decomp.singular_values.clone(), None)
        } else {
            let denoised = filtered.replace_values(shrink.values, true).at(Stage::Decompose)?;
            (shrink.shrunk_singular_values, Some(denoised))
        }
    } else {
        (decomp.singular_values.clone(), None)
    };

    let pulse_freq_hz = match config.f_p_override_hz {
        Some(f) => f,
        None => {
            let sources: Vec<Vec<f64>> = (0..k).map(|i| decomp.right_vector(i)).collect();
            reconstruction::pulse_freq_from_sources(&sources, &weights[..k], decomp.meta.sample_rate_hz, PULSE_BAND_HZ)
                .at(Stage::Reconstruct)?
        }
    };
    let options = AccumulateOptions {
        sign_mode: config.sqi_sign_mode,
        weight_by_sigma: config.weight_by_sigma,
    };
    let (ranked, ppg) = reconstruction::rank_and_accumulate_weighted(&decomp, &weights, pulse_freq_hz, options)
        .at(Stage::Reconstruct)?;

    let spectrogram = timefreq::stft(&ppg, config.stft_window_s, config.stft_hop_s).at(Stage::TimeFrequency)?;
    let ridge = timefreq::extract_ridge(&spectrogram, config.lambda, config.search_band_hz()).at(Stage::TimeFrequency)?;
    let ihr_frames = timefreq::ridge_to_ihr(&ridge, &spectrogram).at(Stage::TimeFrequency)?;
    let ihr = ihr_frames.to_uniform_grid(config.ihr_grid_s).at(Stage::TimeFrequency)?;

    Ok(PipelineOutput {
        decomposition: decomp,
        denoised,
        pulse_freq_hz,
        ranked,
        ppg,
        spectrogram,
        ridge,
        ihr_frames,
        ihr,
    })
}
