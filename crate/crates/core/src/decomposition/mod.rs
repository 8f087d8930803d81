//! Singular value decomposition of the filtered channel matrix, noise level
//! estimation from the Marchenko–Pastur median, and rank selection.
//!
//! Singular values are compared against the noise bulk after normalising by
//! `sigma_hat * sqrt(max(n_r, n_e))`, with aspect ratio
//! `beta = min(n_r, n_e) / max(n_r, n_e)`. For white noise `n_e = n_t`; after
//! band-pass filtering the noise only has about `n_e < n_t` independent
//! samples per channel, and using `n_t` would push many pure-noise
//! components over the edge.

mod marchenko_pastur;

pub use marchenko_pastur::{mp_cdf, mp_edges, mp_median, optimal_shrinkage};

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{AcquisitionMeta, ChannelMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    /// Set when every singular value is zero; `sigma` is then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDecomposition {
    /// `n_r x k` matrix whose columns are the left singular vectors.
    pub left_vectors: DMatrix<f64>,
    /// Non-increasing, length `k = min(n_r, n_t)`.
    pub singular_values: Vec<f64>,
    /// `k x n_t` matrix whose rows are the right singular vectors.
    pub right_vectors: DMatrix<f64>,
    pub noise: NoiseEstimate,
    pub beta: f64,
    /// Independent noise samples per channel assumed by the bulk model.
    pub effective_frames: f64,
    pub retained_rank: usize,
    pub meta: AcquisitionMeta,
}

impl SourceDecomposition {
    pub fn n_regions(&self) -> usize {
        self.left_vectors.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.right_vectors.ncols()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise.sigma
    }

    /// `sqrt(max(n_r, n_e))`, the scale between matrix singular values and
    /// the unit-variance Marchenko–Pastur bulk.
    pub fn dimension_scale(&self) -> f64 {
        (self.n_regions() as f64).max(self.effective_frames).sqrt()
    }

    /// Bulk edge `1 + sqrt(beta)` in normalised units.
    pub fn threshold(&self) -> f64 {
        1.0 + self.beta.sqrt()
    }

    /// Singular values divided by `sigma_hat * sqrt(max(n_r, n_t))`; `None`
    /// when the noise estimate is degenerate.
    pub fn normalized_singular_values(&self) -> Option<Vec<f64>> {
        if self.noise.degenerate || self.noise.sigma <= 0.0 {
            return None;
        }
        let scale = self.noise.sigma * self.dimension_scale();
        Some(self.singular_values.iter().map(|s| s / scale).collect())
    }

    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        self.right_vectors.row(i).iter().copied().collect()
    }

    /// `U diag(s) V` from the stored factors.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.right_vectors.nrows(), self.right_vectors.ncols(), |i, j| {
            self.singular_values[i] * self.right_vectors[(i, j)]
        });
        &self.left_vectors * scaled
    }

    /// Scree table: index, singular value, normalised value, threshold,
    /// retained flag.
    pub fn scree_table(&self) -> String {
        let normalized = self.normalized_singular_values();
        let mut out = String::from("index,sigma,normalized,threshold,retained\n");
        for (i, s) in self.singular_values.iter().enumerate() {
            let y = normalized.as_ref().map_or(0.0, |n| n[i]);
            writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                s,
                y,
                self.threshold(),
                u8::from(i < self.retained_rank)
            )
            .unwrap();
        }
        out
    }
}

/// Full thin SVD of a filtered channel matrix, with noise level and retained
/// rank filled in.
pub fn svd(channels: &ChannelMatrix) -> Result<SourceDecomposition> {
    if !channels.is_filtered() {
        return Err(Error::Validation("decomposition expects a band-passed channel matrix".into()));
    }
    decompose(channels.values(), channels.meta().clone())
}

/// [`svd`] with the noise bulk modelled on `effective_frames` independent
/// samples per channel instead of `n_t`.
pub fn svd_with_effective_frames(channels: &ChannelMatrix, effective_frames: f64) -> Result<SourceDecomposition> {
    if !channels.is_filtered() {
        return Err(Error::Validation("decomposition expects a band-passed channel matrix".into()));
    }
    decompose_with_effective_frames(channels.values(), channels.meta().clone(), effective_frames)
}

/// Same as [`svd`] for a bare matrix (rows are channels, columns frames).
pub fn decompose(values: &DMatrix<f64>, meta: AcquisitionMeta) -> Result<SourceDecomposition> {
    let n_t = values.ncols() as f64;
    decompose_with_effective_frames(values, meta, n_t)
}

pub fn decompose_with_effective_frames(
    values: &DMatrix<f64>,
    meta: AcquisitionMeta,
    effective_frames: f64,
) -> Result<SourceDecomposition> {
    let (n_r, n_t) = values.shape();
    if !(effective_frames >= 1.0 && effective_frames <= n_t as f64) {
        return Err(Error::InvalidParameter(format!(
            "effective frame count {effective_frames} outside [1, {n_t}]"
        )));
    }
    if n_r == 0 || n_t == 0 {
        return Err(Error::DimensionMismatch("cannot decompose an empty matrix".into()));
    }
    if n_t != meta.frame_count {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {n_t} columns, metadata says {}",
            meta.frame_count
        )));
    }
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: idx % n_r,
            column: idx / n_r,
        });
    }

    let k = n_r.min(n_t);
    let factors = nalgebra::linalg::SVD::try_new(values.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical(format!("SVD of {n_r}x{n_t} matrix did not converge")))?;
    let u = factors.u.expect("left vectors requested");
    let v_t = factors.v_t.expect("right vectors requested");
    let sv = factors.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut left = DMatrix::zeros(n_r, k);
    let mut right = DMatrix::zeros(k, n_t);
    let mut singular_values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-10)
            .map_or(1.0, |&v| if v < 0.0 { -1.0 } else { 1.0 });
        left.set_column(dst, &(col * sign));
        right.set_row(dst, &(v_t.row(src) * sign));
        singular_values.push(sv[src].max(0.0));
    }

    let mut decomp = SourceDecomposition {
        left_vectors: left,
        singular_values,
        right_vectors: right,
        noise: NoiseEstimate {
            sigma: 0.0,
            degenerate: true,
        },
        beta: (n_r as f64).min(effective_frames) / (n_r as f64).max(effective_frames),
        effective_frames,
        retained_rank: 0,
        meta,
    };
    decomp.noise = estimate_noise(&decomp)?;
    decomp.retained_rank = select_rank(&decomp);
    Ok(decomp)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `sigma_hat = median(sigma_i) / (sqrt(mu_beta) * sqrt(max(n_r, n_e)))`.
///
/// The median runs over the `min(n_r, n_e)` largest singular values, the
/// ones the noise bulk can populate.
pub fn estimate_noise(decomp: &SourceDecomposition) -> Result<NoiseEstimate> {
    if decomp.singular_values.iter().all(|&s| s == 0.0) {
        return Ok(NoiseEstimate {
            sigma: 0.0,
            degenerate: true,
        });
    }
    let mu = mp_median(decomp.beta)?;
    let bulk = ((decomp.n_regions() as f64).min(decomp.effective_frames).round() as usize)
        .clamp(1, decomp.singular_values.len());
    let sigma = median(&decomp.singular_values[..bulk]) / (mu.sqrt() * decomp.dimension_scale());
    Ok(NoiseEstimate {
        sigma,
        degenerate: sigma == 0.0,
    })
}

/// Number of singular values whose normalised size exceeds the bulk edge.
pub fn select_rank(decomp: &SourceDecomposition) -> usize {
    let Some(normalized) = decomp.normalized_singular_values() else {
        return 0;
    };
    let edge = decomp.threshold();
    normalized.iter().filter(|&&y| y > edge).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    pub values: DMatrix<f64>,
    /// `sigma_hat * sqrt(n) * eta(y_i)` for every component.
    pub shrunk_singular_values: Vec<f64>,
    /// True when the noise estimate was degenerate and `values` is the
    /// unmodified reconstruction.
    pub degenerate: bool,
}

/// Frobenius-optimal shrinkage of the singular values.
pub fn optimal_shrink(decomp: &SourceDecomposition) -> Shrinkage {
    let Some(normalized) = decomp.normalized_singular_values() else {
        return Shrinkage {
            values: decomp.reconstruct(),
            shrunk_singular_values: decomp.singular_values.clone(),
            degenerate: true,
        };
    };
    let scale = decomp.noise.sigma * decomp.dimension_scale();
    let shrunk: Vec<f64> = normalized
        .iter()
        .map(|&y| scale * optimal_shrinkage(y, decomp.beta))
        .collect();
    let (n_r, n_t) = (decomp.n_regions(), decomp.n_frames());
    let mut values = DMatrix::zeros(n_r, n_t);
    for (i, &s) in shrunk.iter().enumerate().filter(|(_, &s)| s > 0.0) {
        let u = decomp.left_vectors.column(i);
        let v = decomp.right_vectors.row(i);
        values += (u * v) * s;
    }
    Shrinkage {
        values,
        shrunk_singular_values: shrunk,
        degenerate: false,
    }
}

/// Replaces the channel values with their shrinkage-denoised version.
pub fn shrink_channels(channels: &ChannelMatrix, decomp: &SourceDecomposition) -> Result<(ChannelMatrix, bool)> {
    let s = optimal_shrink(decomp);
    if s.degenerate {
        return Ok((channels.clone(), true));
    }
    Ok((channels.replace_values(s.values, channels.is_filtered())?, false))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn meta(n_t: usize) -> AcquisitionMeta {
        AcquisitionMeta::new(1.0, n_t, "t").unwrap()
    }

    fn noise(n_r: usize, n_t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n_r, n_t, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rank_one_matrix() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 4, &[0.0, 3.0, 4.0, 0.0]);
        let d = decompose(&(&a * &b), meta(4)).unwrap();
        assert!((d.singular_values[0] - 15.0).abs() < 1e-12);
        assert!(d.singular_values[1..].iter().all(|&s| s < 1e-12));
    }

    #[test]
    fn diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let d = decompose(&m, meta(3)).unwrap();
        for (got, want) in d.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_factors_and_reconstruction() {
        let m = noise(50, 500, 1);
        let d = decompose(&m, meta(500)).unwrap();
        let k = d.singular_values.len();
        let utu = d.left_vectors.transpose() * &d.left_vectors;
        let vvt = &d.right_vectors * d.right_vectors.transpose();
        let eye = DMatrix::<f64>::identity(k, k);
        assert!((utu - &eye).amax() < 1e-8);
        assert!((vvt - &eye).amax() < 1e-8);
        let rel = (d.reconstruct() - &m).norm() / m.norm();
        assert!(rel < 1e-10, "{rel}");
        assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention() {
        let d = decompose(&noise(20, 80, 9), meta(80)).unwrap();
        for i in 0..d.singular_values.len() {
            let first = d.left_vectors.column(i).iter().copied().find(|v| v.abs() > 1e-10).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let d = decompose(&DMatrix::zeros(10, 30), meta(30)).unwrap();
        assert!(d.noise.degenerate);
        assert_eq!(d.noise.sigma, 0.0);
        assert_eq!(d.retained_rank, 0);
        let s = optimal_shrink(&d);
        assert!(s.degenerate);
    }

    #[test]
    fn noise_estimate_scales() {
        let m = noise(40, 400, 3);
        let d1 = decompose(&m, meta(400)).unwrap();
        let d2 = decompose(&(&m * 7.5), meta(400)).unwrap();
        assert!((d2.noise.sigma / d1.noise.sigma - 7.5).abs() < 1e-10);
        assert_eq!(d1.retained_rank, d2.retained_rank);
    }

    #[test]
    fn planted_rank_three() {
        let (n_r, n_t) = (100, 1000);
        let beta = n_r as f64 / n_t as f64;
        let edge = (1.0 + beta.sqrt()) * (n_t as f64).sqrt();
        let mut m = noise(n_r, n_t, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (k, strength) in [8.0, 6.5, 5.0].into_iter().enumerate() {
            let u = nalgebra::DVector::<f64>::from_fn(n_r, |_, _| StandardNormal.sample(&mut rng)).normalize();
            let v = nalgebra::DVector::<f64>::from_fn(n_t, |i, _| {
                (2.0 * std::f64::consts::PI * (k + 1) as f64 * 0.013 * i as f64).sin()
            })
            .normalize();
            m += u * v.transpose() * (strength * edge);
        }
        let d = decompose(&m, meta(n_t)).unwrap();
        assert_eq!(d.retained_rank, 3);
    }

    #[test]
    fn shrinkage_keeps_retained_rank() {
        let (n_r, n_t) = (60, 600);
        let mut m = noise(n_r, n_t, 5);
        let u = nalgebra::DVector::<f64>::from_element(n_r, 1.0).normalize();
        let v = nalgebra::DVector::<f64>::from_fn(n_t, |i, _| (0.1 * i as f64).sin()).normalize();
        m += u * v.transpose() * 200.0;
        let d = decompose(&m, meta(n_t)).unwrap();
        let s = optimal_shrink(&d);
        let nonzero = s.shrunk_singular_values.iter().filter(|&&x| x > 0.0).count();
        assert_eq!(nonzero, d.retained_rank);
        for (a, b) in s.shrunk_singular_values.iter().zip(&d.singular_values) {
            assert!(a <= b);
        }
        let rank = decompose(&s.values, meta(n_t))
            .unwrap()
            .singular_values
            .iter()
            .filter(|&&x| x > 1e-8 * d.singular_values[0])
            .count();
        assert_eq!(rank, d.retained_rank);
    }

    #[test]
    fn svd_requires_filtered_input() {
        let m = ChannelMatrix::new(noise(3, 10, 1), meta(10)).unwrap();
        assert!(svd(&m).is_err());
    }
}
