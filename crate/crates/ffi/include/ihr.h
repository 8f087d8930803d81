#ifndef IHR_H
#define IHR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Bumped on any incompatible change to the declarations in `ihr.h`.
#define IHR_ABI_VERSION 1

typedef enum IhrStatus {
  IHR_STATUS_OK = 0,
  IHR_STATUS_NULL_ARGUMENT = 1,
  IHR_STATUS_INVALID_ARGUMENT = 2,
  IHR_STATUS_IO = 3,
  IHR_STATUS_NUMERICAL = 4,
  // Nothing rose above the noise floor.
  IHR_STATUS_NO_SOURCES = 5,
  IHR_STATUS_PANIC = 6,
  // Output buffer smaller than the data to copy.
  IHR_STATUS_BUFFER_TOO_SMALL = 7,
} IhrStatus;

// Channel matrix: one row per facial region, one column per frame.
typedef struct IhrChannels IhrChannels;

// Outcome of a successful `ihr_run`.
typedef struct IhrResult IhrResult;

// Run settings. Start from `ihr_config_default()` and override fields.
typedef struct IhrConfig {
  uint32_t filter_order;
  double low_cut_bpm;
  double high_cut_bpm;
  bool zero_phase;
  // Count noise degrees of freedom after the band-pass; false assumes
  // white noise over all frames.
  bool filtered_noise_model;
  // Pulse frequency to rank sources against; `<= 0` estimates it.
  double pulse_freq_hz;
  bool use_shrinkage;
  bool greedy_signs;
  bool weight_by_sigma;
  double stft_window_s;
  double stft_hop_s;
  double lambda;
  double search_low_bpm;
  double search_high_bpm;
  double ihr_grid_s;
} IhrConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t ihr_abi_version(void);

struct IhrConfig ihr_config_default(void);

// Message of the last failure on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *ihr_last_error_message(void);

// Builds a channel matrix from `n_regions * n_frames` row-major values.
//
// # Safety
// `values` must point to that many readable doubles and `out` must be
// writable.
enum IhrStatus ihr_channels_new(const double *values,
                                uintptr_t n_regions,
                                uintptr_t n_frames,
                                double sample_rate_hz,
                                struct IhrChannels **out);

// Reads a channel matrix text file and its sidecar.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum IhrStatus ihr_channels_read(const char *path, struct IhrChannels **out);

// # Safety
// `channels` must be NULL or come from `ihr_channels_new`/`ihr_channels_read`.
uintptr_t ihr_channels_n_regions(const struct IhrChannels *channels);

// # Safety
// As for `ihr_channels_n_regions`.
uintptr_t ihr_channels_n_frames(const struct IhrChannels *channels);

// # Safety
// `channels` must be NULL or an unfreed handle from this library.
void ihr_channels_free(struct IhrChannels *channels);

// Runs the pipeline. A NULL `config` uses the defaults.
//
// # Safety
// `channels` must be a live handle, `config` NULL or readable, `out`
// writable.
enum IhrStatus ihr_run(const struct IhrChannels *channels,
                       const struct IhrConfig *config,
                       struct IhrResult **out);

// Points in the uniform-grid heart-rate series.
//
// # Safety
// `result` must be NULL or a live handle.
uintptr_t ihr_result_ihr_len(const struct IhrResult *result);

// Copies the heart-rate series. `times_s` may be NULL when only the
// values are wanted.
//
// # Safety
// `bpm` (and `times_s` if not NULL) must have room for `capacity` doubles.
enum IhrStatus ihr_result_ihr_copy(const struct IhrResult *result,
                                   double *times_s,
                                   double *bpm,
                                   uintptr_t capacity);

// Samples in the reconstructed pulse waveform (one per input frame).
//
// # Safety
// `result` must be NULL or a live handle.
uintptr_t ihr_result_ppg_len(const struct IhrResult *result);

// # Safety
// `samples` must have room for `capacity` doubles.
enum IhrStatus ihr_result_ppg_copy(const struct IhrResult *result,
                                   double *samples,
                                   uintptr_t capacity);

// Singular components kept above the noise edge.
//
// # Safety
// `result` must be NULL or a live handle.
uintptr_t ihr_result_retained_rank(const struct IhrResult *result);

// Pulse frequency the sources were ranked against; NaN for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
double ihr_result_pulse_freq_hz(const struct IhrResult *result);

// Estimated noise standard deviation; NaN for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
double ihr_result_noise_sigma(const struct IhrResult *result);

// # Safety
// `result` must be NULL or an unfreed handle from `ihr_run`.
void ihr_result_free(struct IhrResult *result);

// Median of the Marchenko–Pastur law with aspect ratio `beta` in (0, 1].
//
// # Safety
// `out` must be writable.
enum IhrStatus ihr_mp_median(double beta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IHR_H */
