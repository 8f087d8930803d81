//! Domain types shared by every pipeline stage.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards, so they can be shared freely across threads.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper physiological bound accepted for any heart-rate value.
pub const MAX_BPM: f64 = 300.0;

/// Sampling description of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub frame_count: usize,
    pub source_label: String,
}

impl AcquisitionMeta {
    /// Builds metadata for `frame_count` frames sampled at `sample_rate_hz`;
    /// the duration is `frame_count / sample_rate_hz`.
    pub fn new(sample_rate_hz: f64, frame_count: usize, source_label: impl Into<String>) -> Result<Self> {
        let meta = AcquisitionMeta {
            sample_rate_hz,
            duration_s: frame_count as f64 / sample_rate_hz,
            frame_count,
            source_label: source_label.into(),
        };
        meta.validate()?;
        Ok(meta)
    }

    /// Builds metadata from a recording length, with `frame_count = floor(T * fs)`.
    pub fn from_duration(sample_rate_hz: f64, duration_s: f64, source_label: impl Into<String>) -> Result<Self> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::InvalidParameter(format!("duration_s must be positive, got {duration_s}")));
        }
        let frame_count = (duration_s * sample_rate_hz).floor() as usize;
        let meta = AcquisitionMeta {
            sample_rate_hz,
            duration_s,
            frame_count,
            source_label: source_label.into(),
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidParameter(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if self.frame_count == 0 {
            return Err(Error::InvalidParameter("frame_count must be positive".into()));
        }
        let expected = (self.duration_s * self.sample_rate_hz).floor();
        if (expected - self.frame_count as f64).abs() > 1.0 {
            return Err(Error::Validation(format!(
                "frame_count {} inconsistent with duration {} s at {} Hz",
                self.frame_count, self.duration_s, self.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    /// Time stamp of frame `j` (zero-based).
    pub fn frame_time(&self, j: usize) -> f64 {
        j as f64 / self.sample_rate_hz
    }
}

/// The five major facial areas used to group mesh regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FacialArea {
    Forehead,
    LeftCheek,
    RightCheek,
    Nose,
    Chin,
}

impl FacialArea {
    pub const ALL: [FacialArea; 5] = [
        FacialArea::Forehead,
        FacialArea::LeftCheek,
        FacialArea::RightCheek,
        FacialArea::Nose,
        FacialArea::Chin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FacialArea::Forehead => "forehead",
            FacialArea::LeftCheek => "left-cheek",
            FacialArea::RightCheek => "right-cheek",
            FacialArea::Nose => "nose",
            FacialArea::Chin => "chin",
        }
    }
}

impl fmt::Display for FacialArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacialArea {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FacialArea::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown facial area '{s}'")))
    }
}

/// One mesh cell: a set of `(row, column)` pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: u32,
    pub area: Option<FacialArea>,
    pub pixels: Vec<(usize, usize)>,
}

/// Partition of (part of) the frame into disjoint regions. Region `k` of the
/// mesh corresponds to row `k` of any channel matrix derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMesh {
    regions: Vec<Region>,
    frame_dims: (usize, usize),
}

impl RegionMesh {
    pub fn new(regions: Vec<Region>, frame_dims: (usize, usize)) -> Result<Self> {
        let (height, width) = frame_dims;
        let mut seen_ids = HashSet::new();
        let mut seen_pixels = HashSet::new();
        for region in &regions {
            if !seen_ids.insert(region.id) {
                return Err(Error::Validation(format!("duplicate region id {}", region.id)));
            }
            if region.pixels.is_empty() {
                return Err(Error::Validation(format!("region {} is empty", region.id)));
            }
            for &(r, c) in &region.pixels {
                if r >= height || c >= width {
                    return Err(Error::Validation(format!(
                        "region {}: pixel ({r}, {c}) outside frame {height}x{width}",
                        region.id
                    )));
                }
                if !seen_pixels.insert((r, c)) {
                    return Err(Error::Validation(format!(
                        "region {}: pixel ({r}, {c}) belongs to more than one region",
                        region.id
                    )));
                }
            }
        }
        Ok(RegionMesh { regions, frame_dims })
    }

    /// Tiles the frame with non-overlapping `cell x cell` squares, dropping
    /// incomplete cells at the right and bottom borders.
    pub fn grid(frame_dims: (usize, usize), cell: usize) -> Result<Self> {
        if cell == 0 {
            return Err(Error::InvalidParameter("cell size must be positive".into()));
        }
        let (height, width) = frame_dims;
        let mut regions = Vec::new();
        for r0 in (0..height / cell).map(|i| i * cell) {
            for c0 in (0..width / cell).map(|j| j * cell) {
                let pixels = (r0..r0 + cell)
                    .flat_map(|r| (c0..c0 + cell).map(move |c| (r, c)))
                    .collect();
                regions.push(Region {
                    id: regions.len() as u32,
                    area: None,
                    pixels,
                });
            }
        }
        if regions.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "cell size {cell} larger than frame {height}x{width}"
            )));
        }
        RegionMesh::new(regions, frame_dims)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.frame_dims
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Row indices (mesh order) of the regions labelled with `area`.
    pub fn rows_in_area(&self, area: FacialArea) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.area == Some(area))
            .map(|(i, _)| i)
            .collect()
    }
}

/// The `n_r x n_t` matrix of per-region mean intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    values: DMatrix<f64>,
    meta: AcquisitionMeta,
    mesh_ref: Option<String>,
    filtered: bool,
}

impl ChannelMatrix {
    /// Wraps an unfiltered matrix. Rows are regions, columns are frames.
    pub fn new(values: DMatrix<f64>, meta: AcquisitionMeta) -> Result<Self> {
        Self::with_flags(values, meta, None, false)
    }

    pub fn with_flags(
        values: DMatrix<f64>,
        meta: AcquisitionMeta,
        mesh_ref: Option<String>,
        filtered: bool,
    ) -> Result<Self> {
        meta.validate()?;
        if values.nrows() == 0 {
            return Err(Error::DimensionMismatch("channel matrix has no rows".into()));
        }
        if values.ncols() != meta.frame_count {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns but frame_count is {}",
                values.ncols(),
                meta.frame_count
            )));
        }
        for column in 0..values.ncols() {
            for row in 0..values.nrows() {
                if !values[(row, column)].is_finite() {
                    return Err(Error::NonFinite { row, column });
                }
            }
        }
        Ok(ChannelMatrix {
            values,
            meta,
            mesh_ref,
            filtered,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn meta(&self) -> &AcquisitionMeta {
        &self.meta
    }

    pub fn mesh_ref(&self) -> Option<&str> {
        self.mesh_ref.as_deref()
    }

    pub fn is_filtered(&self) -> bool {
        self.filtered
    }

    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Returns a matrix restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<ChannelMatrix> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("row selection is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_regions()) {
            return Err(Error::InvalidParameter(format!(
                "row {bad} out of range for {} regions",
                self.n_regions()
            )));
        }
        Ok(ChannelMatrix {
            values: self.values.select_rows(rows),
            meta: self.meta.clone(),
            mesh_ref: self.mesh_ref.clone(),
            filtered: self.filtered,
        })
    }

    pub(crate) fn replace_values(&self, values: DMatrix<f64>, filtered: bool) -> Result<ChannelMatrix> {
        Self::with_flags(values, self.meta.clone(), self.mesh_ref.clone(), filtered)
    }
}

/// One grayscale frame, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Frame { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, column: usize) -> f64 {
        self.data[row * self.width + column]
    }
}

/// Time-stamped instantaneous heart rate in beats per minute.
#[derive(Debug, Clone, PartialEq)]
pub struct IhrSeries {
    timestamps_s: Vec<f64>,
    bpm: Vec<f64>,
}

impl IhrSeries {
    pub fn new(timestamps_s: Vec<f64>, bpm: Vec<f64>) -> Result<Self> {
        if timestamps_s.len() != bpm.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} timestamps but {} rate values",
                timestamps_s.len(),
                bpm.len()
            )));
        }
        if timestamps_s.is_empty() {
            return Err(Error::InsufficientData("heart-rate series is empty".into()));
        }
        if let Some(i) = timestamps_s.iter().position(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("timestamp {i} is not finite")));
        }
        if let Some(i) = timestamps_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = bpm.iter().position(|&b| !(b.is_finite() && b > 0.0 && b <= MAX_BPM)) {
            return Err(Error::Validation(format!(
                "rate {} at index {i} outside (0, {MAX_BPM}] bpm",
                bpm[i]
            )));
        }
        Ok(IhrSeries { timestamps_s, bpm })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps_s
    }

    pub fn bpm(&self) -> &[f64] {
        &self.bpm
    }

    pub fn len(&self) -> usize {
        self.bpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bpm.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.timestamps_s[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamps_s[self.timestamps_s.len() - 1]
    }

    /// Median spacing between samples; `None` for a single sample.
    pub fn median_step(&self) -> Option<f64> {
        let mut steps: Vec<f64> = self.timestamps_s.windows(2).map(|w| w[1] - w[0]).collect();
        if steps.is_empty() {
            return None;
        }
        steps.sort_by(f64::total_cmp);
        Some(steps[steps.len() / 2])
    }

    /// Piecewise-linear value at `t`; `None` outside the series support.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        interpolate_linear(&self.timestamps_s, &self.bpm, t)
    }

    /// Linear interpolation onto `grid`, which must lie inside the support.
    pub fn resample_linear(&self, grid: &[f64]) -> Result<IhrSeries> {
        let bpm = grid
            .iter()
            .map(|&t| {
                self.value_at(t).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "grid point {t} outside series support [{}, {}]",
                        self.start(),
                        self.end()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        IhrSeries::new(grid.to_vec(), bpm)
    }

    /// Interpolates onto the uniform grid `start, start + step, ...` covering
    /// the series support.
    pub fn to_uniform_grid(&self, step_s: f64) -> Result<IhrSeries> {
        if !(step_s.is_finite() && step_s > 0.0) {
            return Err(Error::InvalidParameter(format!("grid step must be positive, got {step_s}")));
        }
        let grid = uniform_grid(self.start(), self.end(), step_s);
        self.resample_linear(&grid)
    }
}

/// `start, start + step, ...` up to and including `end` (with a small
/// tolerance so that an exact multiple is not lost to rounding).
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| start + k as f64 * step).collect()
}

pub(crate) fn interpolate_linear(xs: &[f64], ys: &[f64], t: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || t < xs[0] || t > xs[n - 1] || t.is_nan() {
        return None;
    }
    if n == 1 {
        return Some(ys[0]);
    }
    let k = xs.partition_point(|&x| x <= t);
    if k == n {
        return Some(ys[n - 1]);
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let (y0, y1) = (ys[k - 1], ys[k]);
    if t == x0 {
        return Some(y0);
    }
    Some(y0 + (y1 - y0) * (t - x0) / (x1 - x0))
}
