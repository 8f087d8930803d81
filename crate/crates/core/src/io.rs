//! Text file formats.
//!
//! * Channel matrix: one row per region, whitespace-separated decimals, plus
//!   a `<path>.meta` sidecar of `key = value` lines (TOML).
//! * R-peaks: one time in seconds per line.
//! * Heart rate: `time_s,bpm` header followed by two comma-separated columns.
//! * Region mesh: see [`write_mesh`].
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionMeta, ChannelMatrix, FacialArea, Frame, IhrSeries, Region, RegionMesh};

pub const IHR_HEADER: &str = "time_s,bpm";
pub const PPG_HEADER: &str = "time_s,value";

/// Contents of the channel-matrix sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSidecar {
    pub sample_rate_hz: f64,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_regions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub source_label: String,
    #[serde(default)]
    pub filtered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

pub fn sidecar_path(matrix_path: &Path) -> PathBuf {
    let mut name = matrix_path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<ChannelSidecar> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0);
        Error::parse(path, line, e.message().to_string())
    })
}

pub fn read_channel_matrix(path: impl AsRef<Path>) -> Result<ChannelMatrix> {
    read_channel_matrix_with_generator(path).map(|(m, _)| m)
}

/// Reads a channel matrix and also returns the generator identifier recorded
/// in its sidecar, if any.
pub fn read_channel_matrix_with_generator(path: impl AsRef<Path>) -> Result<(ChannelMatrix, Option<String>)> {
    let path = path.as_ref();
    let sidecar = read_sidecar(&sidecar_path(path))?;
    let text = read_text(path)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row_index = rows.len();
        let row = line
            .split_whitespace()
            .enumerate()
            .map(|(column, tok)| {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::parse(
                        path,
                        idx + 1,
                        format!("row {row_index}, column {column}: cannot parse '{tok}'"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        path,
                        idx + 1,
                        format!("row {row_index}, column {column}: non-finite value '{tok}'"),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != sidecar.frame_count {
            return Err(Error::DimensionMismatch(format!(
                "{}:{}: row {row_index} has {} values but sidecar declares frame_count = {}",
                path.display(),
                idx + 1,
                row.len(),
                sidecar.frame_count
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::DimensionMismatch(format!("{}: no rows", path.display())));
    }
    if let Some(n) = sidecar.n_regions {
        if n != rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} rows but sidecar declares n_regions = {n}",
                path.display(),
                rows.len()
            )));
        }
    }

    let meta = AcquisitionMeta {
        sample_rate_hz: sidecar.sample_rate_hz,
        duration_s: sidecar
            .duration_s
            .unwrap_or(sidecar.frame_count as f64 / sidecar.sample_rate_hz),
        frame_count: sidecar.frame_count,
        source_label: sidecar.source_label.clone(),
    };
    let n_t = sidecar.frame_count;
    let values = DMatrix::from_fn(rows.len(), n_t, |i, j| rows[i][j]);
    let matrix = ChannelMatrix::with_flags(values, meta, sidecar.mesh_ref, sidecar.filtered)?;
    Ok((matrix, sidecar.generator))
}

pub fn write_channel_matrix(path: impl AsRef<Path>, channels: &ChannelMatrix) -> Result<()> {
    write_channel_matrix_with_generator(path, channels, None)
}

pub fn write_channel_matrix_with_generator(
    path: impl AsRef<Path>,
    channels: &ChannelMatrix,
    generator: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let values = channels.values();
    let mut text = String::with_capacity(values.len() * 20);
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            if j > 0 {
                text.push(' ');
            }
            write!(text, "{}", values[(i, j)]).unwrap();
        }
        text.push('\n');
    }
    write_text(path, &text)?;

    let meta = channels.meta();
    let sidecar = ChannelSidecar {
        sample_rate_hz: meta.sample_rate_hz,
        frame_count: meta.frame_count,
        n_regions: Some(channels.n_regions()),
        duration_s: Some(meta.duration_s),
        source_label: meta.source_label.clone(),
        filtered: channels.is_filtered(),
        mesh_ref: channels.mesh_ref().map(str::to_owned),
        generator: generator.map(str::to_owned),
    };
    let sidecar_text = toml::to_string(&sidecar).map_err(|e| Error::Validation(e.to_string()))?;
    write_text(&sidecar_path(path), &sidecar_text)
}

/// Parses R-peak times (seconds, one per line). Blank lines and `#` comments
/// are skipped.
pub fn parse_rpeaks(text: &str, origin: &Path) -> Result<Vec<f64>> {
    let mut peaks: Vec<f64> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: f64 = line
            .parse()
            .map_err(|_| Error::parse(origin, idx + 1, format!("cannot parse peak time '{line}'")))?;
        if !t.is_finite() {
            return Err(Error::parse(origin, idx + 1, "non-finite peak time"));
        }
        if let Some(&prev) = peaks.last() {
            if t <= prev {
                return Err(Error::parse(
                    origin,
                    idx + 1,
                    format!("peak times not strictly increasing ({t} after {prev})"),
                ));
            }
        }
        peaks.push(t);
    }
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: need at least 2 R-peaks, found {}",
            origin.display(),
            peaks.len()
        )));
    }
    Ok(peaks)
}

pub fn read_rpeaks(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    parse_rpeaks(&read_text(path)?, path)
}

pub fn write_rpeaks(path: impl AsRef<Path>, peaks: &[f64]) -> Result<()> {
    let mut text = String::new();
    for t in peaks {
        writeln!(text, "{t}").unwrap();
    }
    write_text(path.as_ref(), &text)
}

fn read_two_columns(path: &Path, header: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, first)) if first.trim() == header => {}
        Some((idx, other)) => {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected header '{header}', found '{}'", other.trim()),
            ))
        }
        None => return Err(Error::parse(path, 0, "empty file")),
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, line) in lines {
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(path, idx + 1, "expected exactly two comma-separated fields"));
        };
        let parse = |tok: &str| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(path, idx + 1, format!("cannot parse '{tok}'")))
        };
        xs.push(parse(a)?);
        ys.push(parse(b)?);
    }
    Ok((xs, ys))
}

fn write_two_columns(path: &Path, header: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(xs.len() * 24 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for (x, y) in xs.iter().zip(ys) {
        writeln!(text, "{x},{y}").unwrap();
    }
    write_text(path, &text)
}

pub fn read_ihr(path: impl AsRef<Path>) -> Result<IhrSeries> {
    let path = path.as_ref();
    let (t, bpm) = read_two_columns(path, IHR_HEADER)?;
    IhrSeries::new(t, bpm).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_ihr(path: impl AsRef<Path>, series: &IhrSeries) -> Result<()> {
    write_two_columns(path.as_ref(), IHR_HEADER, series.timestamps(), series.bpm())
}

/// Writes a sampled waveform as `time_s,value` rows.
pub fn write_waveform(path: impl AsRef<Path>, sample_rate_hz: f64, samples: &[f64]) -> Result<()> {
    let times: Vec<f64> = (0..samples.len()).map(|j| j as f64 / sample_rate_hz).collect();
    write_two_columns(path.as_ref(), PPG_HEADER, &times, samples)
}

pub fn read_waveform(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    read_two_columns(path.as_ref(), PPG_HEADER)
}

/// Writes a region mesh:
///
/// ```text
/// frame_dims <height> <width>
/// region <id> <area or -> <row>,<col> <row>,<col> ...
/// ```
///
/// `area` is one of `forehead`, `left-cheek`, `right-cheek`, `nose`, `chin`,
/// or `-` for an unlabelled region. Lines starting with `#` are comments.
pub fn write_mesh(path: impl AsRef<Path>, mesh: &RegionMesh) -> Result<()> {
    let (h, w) = mesh.frame_dims();
    let mut text = format!("frame_dims {h} {w}\n");
    for region in mesh.regions() {
        let area = region.area.map_or("-", FacialArea::as_str);
        write!(text, "region {} {area}", region.id).unwrap();
        for (r, c) in &region.pixels {
            write!(text, " {r},{c}").unwrap();
        }
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<RegionMesh> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut dims = None;
    let mut regions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(path, idx + 1, msg);
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("frame_dims") => {
                let mut next_dim = || -> Result<usize> {
                    let tok = tokens.next().ok_or_else(|| err("missing frame dimension".into()))?;
                    tok.parse().map_err(|_| err(format!("bad frame dimension '{tok}'")))
                };
                dims = Some((next_dim()?, next_dim()?));
            }
            Some("region") => {
                let id_tok = tokens.next().ok_or_else(|| err("missing region id".into()))?;
                let id: u32 = id_tok.parse().map_err(|_| err(format!("bad region id '{id_tok}'")))?;
                let area_tok = tokens.next().ok_or_else(|| err("missing area label".into()))?;
                let area = match area_tok {
                    "-" => None,
                    label => Some(label.parse::<FacialArea>().map_err(|e| err(e.to_string()))?),
                };
                let pixels = tokens
                    .map(|tok| {
                        let (r, c) = tok
                            .split_once(',')
                            .ok_or_else(|| err(format!("bad pixel '{tok}'")))?;
                        let r = r.parse().map_err(|_| err(format!("bad pixel row '{r}'")))?;
                        let c = c.parse().map_err(|_| err(format!("bad pixel column '{c}'")))?;
                        Ok((r, c))
                    })
                    .collect::<Result<Vec<_>>>()?;
                regions.push(Region { id, area, pixels });
            }
            Some(other) => return Err(err(format!("unknown record '{other}'"))),
            None => unreachable!(),
        }
    }
    let dims = dims.ok_or_else(|| Error::parse(path, 0, "missing frame_dims record"))?;
    RegionMesh::new(regions, dims)
}

/// Loads every grayscale image in `dir` (extensions `pgm`, `pnm`, `png`) in
/// lexicographic file-name order.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "pnm" | "png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no image frames found", dir.display())));
    }
    paths.iter().map(|p| read_frame(p)).collect()
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(Error::Image {
                path: path.to_owned(),
                message: format!("expected a grayscale image, got {:?}", other.color()),
            })
        }
    };
    Frame::new(h, w, data)
}
