//! Instantaneous heart rate from per-region infrared face intensities.
//!
//! The pipeline band-passes the channel matrix, keeps the singular
//! components that rise above the Marchenko–Pastur noise edge, combines the
//! temporal components with the best spectral quality into a pulse waveform,
//! and tracks the dominant ridge of its spectrogram.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruction;
pub mod rpeaks;
pub mod spectrum;
pub mod synthetic;
pub mod timefreq;

pub use error::{Error, ErrorClass, Result};
pub use model::{AcquisitionMeta, ChannelMatrix, FacialArea, Frame, IhrSeries, Region, RegionMesh};
