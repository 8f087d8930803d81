use std::f64::consts::PI;

use ihr_core::evaluation::{relative_error, resample_mean, rmse};
use ihr_core::io;
use ihr_core::synthetic::{generate, MixtureSpec};
use ihr_core::timefreq::{extract_ridge, ridge_path, stft_samples};
use ihr_core::{AcquisitionMeta, ChannelMatrix, IhrSeries};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn series(start: f64, step: f64, bpm: &[f64]) -> IhrSeries {
    let t = (0..bpm.len()).map(|k| start + step * k as f64).collect();
    IhrSeries::new(t, bpm.to_vec()).unwrap()
}

fn bpm_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(30.0..220.0f64, len)
}

/// Score of a path under the ridge objective, computed independently.
fn path_score(logs: &DMatrix<f64>, path: &[usize], lambda: f64) -> f64 {
    let data: f64 = path.iter().enumerate().map(|(t, &b)| logs[(t, b)]).sum();
    let tv: usize = path.windows(2).map(|w| w[0].abs_diff(w[1])).sum();
    data - lambda * tv as f64
}

fn total_variation(path: &[usize]) -> usize {
    path.windows(2).map(|w| w[0].abs_diff(w[1])).sum()
}

fn brute_force_best(logs: &DMatrix<f64>, lambda: f64) -> f64 {
    let (frames, bins) = logs.shape();
    let mut best = f64::NEG_INFINITY;
    let mut path = vec![0usize; frames];
    loop {
        best = best.max(path_score(logs, &path, lambda));
        let mut k = 0;
        loop {
            if k == frames {
                return best;
            }
            path[k] += 1;
            if path[k] < bins {
                break;
            }
            path[k] = 0;
            k += 1;
        }
    }
}

fn log_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=5, 1usize..=4).prop_flat_map(|(f, b)| {
        prop::collection::vec(-5.0..5.0f64, f * b).prop_map(move |v| DMatrix::from_row_slice(f, b, &v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rmse_is_symmetric_and_non_negative(a in bpm_vec(5..40), shift in -3.0..3.0f64) {
        let b: Vec<f64> = a.iter().rev().map(|v| v + shift).collect();
        let (sa, sb) = (series(0.0, 1.0, &a), series(0.0, 1.0, &b));
        let ab = rmse(&sa, &sb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, rmse(&sb, &sa).unwrap());
        prop_assert_eq!(rmse(&sa, &sa).unwrap(), 0.0);
    }

    #[test]
    fn rmse_of_constant_offset(a in bpm_vec(5..40), shift in -10.0..10.0f64) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let e = rmse(&series(0.0, 1.0, &a), &series(0.0, 1.0, &b)).unwrap();
        prop_assert!((e - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn relative_error_ignores_common_scale(a in bpm_vec(5..40), t in bpm_vec(5..40), scale in 0.1..1.35f64) {
        let n = a.len().min(t.len());
        let (a, t) = (&a[..n], &t[..n]);
        let base = relative_error(&series(0.0, 1.0, a), &series(0.0, 1.0, t)).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let st: Vec<f64> = t.iter().map(|v| v * scale).collect();
        let scaled = relative_error(&series(0.0, 1.0, &sa), &series(0.0, 1.0, &st)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn window_mean_at_native_step_is_identity(a in bpm_vec(2..50), start in -5.0..5.0f64, step in 0.2..3.0f64) {
        let s = series(start, step, &a);
        let r = resample_mean(&s, step).unwrap();
        prop_assert_eq!(r.bpm(), s.bpm());
        for (x, y) in r.timestamps().iter().zip(s.timestamps()) {
            prop_assert!((x - y).abs() < 1e-9 * step.max(1.0));
        }
    }

    #[test]
    fn ridge_dp_matches_exhaustive_search(logs in log_matrix(), lambda in 0.0..3.0f64) {
        let path = ridge_path(&logs, lambda);
        prop_assert_eq!(path.len(), logs.nrows());
        prop_assert!(path.iter().all(|&b| b < logs.ncols()));
        let got = path_score(&logs, &path, lambda);
        let best = brute_force_best(&logs, lambda);
        prop_assert!((got - best).abs() < 1e-9, "dp {} vs exhaustive {}", got, best);
    }

    #[test]
    fn ridge_variation_shrinks_with_penalty(
        values in prop::collection::vec(-8.0..2.0f64, 12 * 9),
    ) {
        let logs = DMatrix::from_row_slice(12, 9, &values);
        let tvs: Vec<usize> = [0.0, 0.1, 1.0, 10.0, 1e9]
            .iter()
            .map(|&l| total_variation(&ridge_path(&logs, l)))
            .collect();
        prop_assert!(tvs.windows(2).all(|w| w[1] <= w[0]), "{:?}", tvs);
        prop_assert_eq!(*tvs.last().unwrap(), 0);
    }

    #[test]
    fn spectrogram_ignores_sign(x in prop::collection::vec(-1.0..1.0f64, 300..600)) {
        let a = stft_samples(&x, 50.0, 2.0, 0.5).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let b = stft_samples(&neg, 50.0, 2.0, 0.5).unwrap();
        prop_assert_eq!(a.magnitudes, b.magnitudes);
    }

    #[test]
    fn channel_matrix_text_round_trip(
        (rows, cols, values) in (1usize..6, 2usize..20)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-1e6..1e6f64, r * c))),
        fs in 1.0..200.0f64,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let meta = AcquisitionMeta::new(fs, cols, "prop").unwrap();
        let m = ChannelMatrix::new(DMatrix::from_row_slice(rows, cols, &values), meta).unwrap();
        io::write_channel_matrix(&path, &m).unwrap();
        let back = io::read_channel_matrix(&path).unwrap();
        prop_assert_eq!(back.values(), m.values());
        prop_assert_eq!(back.meta().sample_rate_hz, fs);
    }

    #[test]
    fn ihr_and_rpeaks_round_trip(a in bpm_vec(1..30), start in -100.0..100.0f64) {
        let dir = tempfile::tempdir().unwrap();
        let s = series(start, 0.37, &a);
        io::write_ihr(dir.path().join("ihr.csv"), &s).unwrap();
        prop_assert_eq!(io::read_ihr(dir.path().join("ihr.csv")).unwrap(), s.clone());
        if s.len() >= 2 {
            io::write_rpeaks(dir.path().join("r.txt"), s.timestamps()).unwrap();
            prop_assert_eq!(io::read_rpeaks(dir.path().join("r.txt")).unwrap(), s.timestamps().to_vec());
        }
    }
}

#[test]
fn four_by_three_worked_ridge() {
    // Chasing the peaks scores 0 - 1.5 * 6; the middle bin scores -4 with
    // no jumps, and every mixed path pays at least 4.5.
    let logs = DMatrix::from_row_slice(4, 3, &[0.0, -1.0, -5.0, -5.0, -1.0, 0.0, 0.0, -1.0, -5.0, -5.0, -1.0, 0.0]);
    assert_eq!(ridge_path(&logs, 0.0), vec![0, 2, 0, 2]);
    assert_eq!(ridge_path(&logs, 1.5), vec![1, 1, 1, 1]);
    assert_eq!(path_score(&logs, &[1, 1, 1, 1], 1.5), -4.0);
    assert_eq!(brute_force_best(&logs, 1.5), -4.0);
}

#[test]
fn chirp_ridge_rises_monotonically() {
    let fs = 50.0;
    let dur = 120.0;
    let (f0, f1) = (1.0, 1.5);
    let n = (fs * dur) as usize;
    let x: Vec<f64> = (0..n)
        .map(|j| {
            let t = j as f64 / fs;
            (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)).sin()
        })
        .collect();
    let spec = stft_samples(&x, fs, 10.0, 1.0).unwrap();
    let ridge = extract_ridge(&spec, 0.05, (40.0 / 60.0, 200.0 / 60.0)).unwrap();
    let freqs: Vec<f64> = ridge.bin_indices.iter().map(|&b| spec.bin_freqs_hz[b]).collect();
    // Only frames whose window lies inside the signal; the first ones see
    // the mirrored padding.
    let inside: Vec<f64> = spec
        .frame_times_s
        .iter()
        .zip(&freqs)
        .filter(|(t, _)| (5.0..=dur - 5.0).contains(*t))
        .map(|(_, &f)| f)
        .collect();
    assert!(inside.len() > 100);
    assert!(inside.windows(2).all(|w| w[1] >= w[0]), "{inside:?}");
    for (t, f) in spec.frame_times_s.iter().zip(&freqs) {
        if (10.0..=dur - 10.0).contains(t) {
            let expected = f0 + (f1 - f0) * t / dur;
            assert!((f - expected).abs() < 0.02, "t={t}: {f} vs {expected}");
        }
    }
}

fn spec_from(text: &str) -> MixtureSpec {
    MixtureSpec::from_toml(text).unwrap()
}

#[test]
fn noiseless_mixture_has_rank_of_its_sources() {
    let spec = spec_from(
        r#"
n_regions = 30
mixing_seed = 7
noise_sigma = 0.0
[meta]
sample_rate_hz = 30.0
duration_s = 40.0
[[sources]]
kind = "hemodynamic-chirp"
amplitude = 1.0
bpm_start = 70.0
bpm_end = 80.0
[[sources]]
kind = "respiration"
amplitude = 0.5
rate_bpm = 12.0
[[sources]]
kind = "baseline-drift"
amplitude = 0.3
"#,
    );
    let data = generate(&spec).unwrap();
    let sv = data.channels.values().clone().singular_values();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    assert!(sv[2] / sv[0] > 1e-3, "{:?}", &sv[..4]);
    assert!(sv[3] / sv[0] < 1e-10, "{:?}", &sv[..4]);
}

#[test]
fn noise_only_mixture_is_white() {
    let spec = spec_from(
        r#"
n_regions = 10
mixing_seed = 3
noise_sigma = 2.0
[meta]
sample_rate_hz = 50.0
duration_s = 100.0
"#,
    );
    let data = generate(&spec).unwrap();
    let x = data.channels.values();
    let (n_r, n_t) = x.shape();
    assert_eq!(n_t, 5000);
    let cov = x * x.transpose() / n_t as f64;
    let dev = (cov - DMatrix::identity(n_r, n_r) * 4.0).norm() / 4.0;
    // Each entry has sampling spread 1/sqrt(n_t) around the identity.
    assert!(dev < 4.0 * n_r as f64 / (n_t as f64).sqrt(), "deviation {dev}");
}

#[test]
fn same_seed_same_draw() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/chirp.toml")).unwrap();
    let a = generate(&spec_from(&text)).unwrap();
    let b = generate(&spec_from(&text)).unwrap();
    assert_eq!(a.channels.values(), b.channels.values());
    let mut other = spec_from(&text);
    other.mixing_seed += 1;
    assert_ne!(generate(&other).unwrap().channels.values(), a.channels.values());
}
