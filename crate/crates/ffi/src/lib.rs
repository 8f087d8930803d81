//! C interface to the heart-rate pipeline.
//!
//! Objects cross the boundary as opaque pointers that the caller releases
//! with the matching `*_free`. Every entry point returns an [`IhrStatus`];
//! on failure the message is kept per thread and can be fetched with
//! [`ihr_last_error_message`]. Panics are caught and reported as
//! `IHR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ihr_core::decomposition::mp_median;
use ihr_core::pipeline::{run_pipeline, NoiseModel, PipelineConfig, PipelineOutput};
use ihr_core::preprocess::FilterSpec;
use ihr_core::reconstruction::SignMode;
use ihr_core::{io, AcquisitionMeta, ChannelMatrix, ErrorClass};
use nalgebra::DMatrix;

/// Bumped on any incompatible change to the declarations in `ihr.h`.
pub const IHR_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IhrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Numerical = 4,
    /// Nothing rose above the noise floor.
    NoSources = 5,
    Panic = 6,
    /// Output buffer smaller than the data to copy.
    BufferTooSmall = 7,
}

impl From<ErrorClass> for IhrStatus {
    fn from(class: ErrorClass) -> Self {
        match class {
            ErrorClass::Io => IhrStatus::Io,
            ErrorClass::Validation => IhrStatus::InvalidArgument,
            ErrorClass::Numerical => IhrStatus::Numerical,
            ErrorClass::NoSignal => IhrStatus::NoSources,
        }
    }
}

/// Run settings. Start from `ihr_config_default()` and override fields.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IhrConfig {
    pub filter_order: u32,
    pub low_cut_bpm: f64,
    pub high_cut_bpm: f64,
    pub zero_phase: bool,
    /// Count noise degrees of freedom after the band-pass; false assumes
    /// white noise over all frames.
    pub filtered_noise_model: bool,
    /// Pulse frequency to rank sources against; `<= 0` estimates it.
    pub pulse_freq_hz: f64,
    pub use_shrinkage: bool,
    pub greedy_signs: bool,
    pub weight_by_sigma: bool,
    pub stft_window_s: f64,
    pub stft_hop_s: f64,
    pub lambda: f64,
    pub search_low_bpm: f64,
    pub search_high_bpm: f64,
    pub ihr_grid_s: f64,
}

impl From<&PipelineConfig> for IhrConfig {
    fn from(c: &PipelineConfig) -> Self {
        IhrConfig {
            filter_order: c.filter.order as u32,
            low_cut_bpm: c.filter.low_cut_bpm,
            high_cut_bpm: c.filter.high_cut_bpm,
            zero_phase: c.filter.zero_phase,
            filtered_noise_model: c.noise_model == NoiseModel::Filtered,
            pulse_freq_hz: c.f_p_override_hz.unwrap_or(0.0),
            use_shrinkage: c.use_shrinkage,
            greedy_signs: c.sqi_sign_mode == SignMode::Greedy,
            weight_by_sigma: c.weight_by_sigma,
            stft_window_s: c.stft_window_s,
            stft_hop_s: c.stft_hop_s,
            lambda: c.lambda,
            search_low_bpm: c.search_low_bpm,
            search_high_bpm: c.search_high_bpm,
            ihr_grid_s: c.ihr_grid_s,
        }
    }
}

impl IhrConfig {
    fn to_pipeline(self) -> PipelineConfig {
        PipelineConfig {
            filter: FilterSpec {
                order: self.filter_order as usize,
                low_cut_bpm: self.low_cut_bpm,
                high_cut_bpm: self.high_cut_bpm,
                zero_phase: self.zero_phase,
            },
            noise_model: if self.filtered_noise_model { NoiseModel::Filtered } else { NoiseModel::White },
            f_p_override_hz: (self.pulse_freq_hz > 0.0).then_some(self.pulse_freq_hz),
            use_shrinkage: self.use_shrinkage,
            sqi_sign_mode: if self.greedy_signs { SignMode::Greedy } else { SignMode::Off },
            weight_by_sigma: self.weight_by_sigma,
            stft_window_s: self.stft_window_s,
            stft_hop_s: self.stft_hop_s,
            lambda: self.lambda,
            search_low_bpm: self.search_low_bpm,
            search_high_bpm: self.search_high_bpm,
            ihr_grid_s: self.ihr_grid_s,
            ..PipelineConfig::default()
        }
    }
}

/// Channel matrix: one row per facial region, one column per frame.
pub struct IhrChannels {
    inner: ChannelMatrix,
}

/// Outcome of a successful `ihr_run`.
pub struct IhrResult {
    inner: PipelineOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let message = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: IhrStatus, message: impl Into<String>) -> IhrStatus {
    set_error(message);
    status
}

/// Runs `body` with the error slot cleared and any panic turned into a status.
fn guard(body: impl FnOnce() -> IhrStatus) -> IhrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(IhrStatus::Panic, format!("panic: {what}"))
        }
    }
}

fn core_error(e: &ihr_core::Error) -> IhrStatus {
    fail(e.class().into(), e.to_string())
}

#[no_mangle]
pub extern "C" fn ihr_abi_version() -> u32 {
    IHR_ABI_VERSION
}

#[no_mangle]
pub extern "C" fn ihr_config_default() -> IhrConfig {
    IhrConfig::from(&PipelineConfig::default())
}

/// Message of the last failure on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn ihr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a channel matrix from `n_regions * n_frames` row-major values.
///
/// # Safety
/// `values` must point to that many readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ihr_channels_new(
    values: *const f64,
    n_regions: usize,
    n_frames: usize,
    sample_rate_hz: f64,
    out: *mut *mut IhrChannels,
) -> IhrStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return fail(IhrStatus::NullArgument, "values and out must not be NULL");
        }
        *out = ptr::null_mut();
        let Some(len) = n_regions.checked_mul(n_frames).filter(|&n| n > 0) else {
            return fail(IhrStatus::InvalidArgument, "matrix must have at least one region and one frame");
        };
        let data = std::slice::from_raw_parts(values, len);
        let matrix = DMatrix::from_row_slice(n_regions, n_frames, data);
        let built = AcquisitionMeta::new(sample_rate_hz, n_frames, "c-api").and_then(|m| ChannelMatrix::new(matrix, m));
        match built {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(IhrChannels { inner }));
                IhrStatus::Ok
            }
            Err(e) => core_error(&e),
        }
    })
}

/// Reads a channel matrix text file and its sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ihr_channels_read(path: *const c_char, out: *mut *mut IhrChannels) -> IhrStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(IhrStatus::NullArgument, "path and out must not be NULL");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(IhrStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match io::read_channel_matrix(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(IhrChannels { inner }));
                IhrStatus::Ok
            }
            Err(e) => core_error(&e),
        }
    })
}

/// # Safety
/// `channels` must be NULL or come from `ihr_channels_new`/`ihr_channels_read`.
#[no_mangle]
pub unsafe extern "C" fn ihr_channels_n_regions(channels: *const IhrChannels) -> usize {
    channels.as_ref().map_or(0, |c| c.inner.n_regions())
}

/// # Safety
/// As for `ihr_channels_n_regions`.
#[no_mangle]
pub unsafe extern "C" fn ihr_channels_n_frames(channels: *const IhrChannels) -> usize {
    channels.as_ref().map_or(0, |c| c.inner.n_frames())
}

/// # Safety
/// `channels` must be NULL or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ihr_channels_free(channels: *mut IhrChannels) {
    if !channels.is_null() {
        drop(Box::from_raw(channels));
    }
}

/// Runs the pipeline. A NULL `config` uses the defaults.
///
/// # Safety
/// `channels` must be a live handle, `config` NULL or readable, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ihr_run(
    channels: *const IhrChannels,
    config: *const IhrConfig,
    out: *mut *mut IhrResult,
) -> IhrStatus {
    guard(|| {
        if channels.is_null() || out.is_null() {
            return fail(IhrStatus::NullArgument, "channels and out must not be NULL");
        }
        *out = ptr::null_mut();
        let config = config.as_ref().map_or_else(PipelineConfig::default, |c| c.to_pipeline());
        match run_pipeline(&(*channels).inner, None, &config) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(IhrResult { inner }));
                IhrStatus::Ok
            }
            Err(e) => fail(e.class().into(), e.to_string()),
        }
    })
}

/// Points in the uniform-grid heart-rate series.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_ihr_len(result: *const IhrResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.ihr.len())
}

/// Copies the heart-rate series. `times_s` may be NULL when only the
/// values are wanted.
///
/// # Safety
/// `bpm` (and `times_s` if not NULL) must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_ihr_copy(
    result: *const IhrResult,
    times_s: *mut f64,
    bpm: *mut f64,
    capacity: usize,
) -> IhrStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(IhrStatus::NullArgument, "result must not be NULL");
        };
        if bpm.is_null() {
            return fail(IhrStatus::NullArgument, "bpm must not be NULL");
        }
        let series = &r.inner.ihr;
        if capacity < series.len() {
            return fail(
                IhrStatus::BufferTooSmall,
                format!("need {} elements, buffer holds {capacity}", series.len()),
            );
        }
        ptr::copy_nonoverlapping(series.bpm().as_ptr(), bpm, series.len());
        if !times_s.is_null() {
            ptr::copy_nonoverlapping(series.timestamps().as_ptr(), times_s, series.len());
        }
        IhrStatus::Ok
    })
}

/// Samples in the reconstructed pulse waveform (one per input frame).
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_ppg_len(result: *const IhrResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.ppg.samples.len())
}

/// # Safety
/// `samples` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_ppg_copy(result: *const IhrResult, samples: *mut f64, capacity: usize) -> IhrStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(IhrStatus::NullArgument, "result must not be NULL");
        };
        if samples.is_null() {
            return fail(IhrStatus::NullArgument, "samples must not be NULL");
        }
        let ppg = &r.inner.ppg.samples;
        if capacity < ppg.len() {
            return fail(
                IhrStatus::BufferTooSmall,
                format!("need {} elements, buffer holds {capacity}", ppg.len()),
            );
        }
        ptr::copy_nonoverlapping(ppg.as_ptr(), samples, ppg.len());
        IhrStatus::Ok
    })
}

/// Singular components kept above the noise edge.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_retained_rank(result: *const IhrResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.decomposition.retained_rank)
}

/// Pulse frequency the sources were ranked against; NaN for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_pulse_freq_hz(result: *const IhrResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.pulse_freq_hz)
}

/// Estimated noise standard deviation; NaN for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_noise_sigma(result: *const IhrResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.decomposition.noise_sigma())
}

/// # Safety
/// `result` must be NULL or an unfreed handle from `ihr_run`.
#[no_mangle]
pub unsafe extern "C" fn ihr_result_free(result: *mut IhrResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Median of the Marchenko–Pastur law with aspect ratio `beta` in (0, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihr_mp_median(beta: f64, out: *mut f64) -> IhrStatus {
    guard(|| {
        if out.is_null() {
            return fail(IhrStatus::NullArgument, "out must not be NULL");
        }
        match mp_median(beta) {
            Ok(m) => {
                *out = m;
                IhrStatus::Ok
            }
            Err(e) => core_error(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = ihr_config_default();
        assert_eq!(c.to_pipeline(), PipelineConfig::default());
    }

    #[test]
    fn panic_becomes_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, IhrStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ihr_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
