use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ihr_core::io::write_channel_matrix;
use ihr_core::synthetic::{generate, MixtureSpec};
use ihr_ffi::*;

fn chirp_spec() -> MixtureSpec {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/chirp.toml")).unwrap();
    MixtureSpec::from_toml(&text).unwrap()
}

fn last_error() -> String {
    let p = ihr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn row_major(spec: &MixtureSpec) -> (Vec<f64>, usize, usize) {
    let data = generate(spec).unwrap();
    let v = data.channels.values();
    let (r, c) = v.shape();
    let flat = (0..r).flat_map(|i| (0..c).map(move |j| v[(i, j)])).collect();
    (flat, r, c)
}

#[test]
fn abi_version_matches_header() {
    assert_eq!(ihr_abi_version(), IHR_ABI_VERSION);
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ihr.h")).unwrap();
    assert!(header.contains(&format!("#define IHR_ABI_VERSION {IHR_ABI_VERSION}")));
    for name in ["ihr_run", "ihr_channels_new", "ihr_result_free", "ihr_last_error_message", "ihr_mp_median"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn chirp_through_the_c_api() {
    let spec = chirp_spec();
    let (flat, n_r, n_t) = row_major(&spec);
    unsafe {
        let mut channels = ptr::null_mut();
        assert_eq!(ihr_channels_new(flat.as_ptr(), n_r, n_t, 58.0, &mut channels), IhrStatus::Ok);
        assert_eq!(ihr_channels_n_regions(channels), 200);
        assert_eq!(ihr_channels_n_frames(channels), n_t);

        let config = ihr_config_default();
        let mut result = ptr::null_mut();
        assert_eq!(ihr_run(channels, &config, &mut result), IhrStatus::Ok);
        assert!(ihr_last_error_message().is_null());

        let rank = ihr_result_retained_rank(result);
        assert!((1..=6).contains(&rank), "rank {rank}");
        assert!(ihr_result_noise_sigma(result) > 0.0);
        let fp = ihr_result_pulse_freq_hz(result);
        assert!((1.0..1.5).contains(&fp), "pulse {fp} Hz");

        let n = ihr_result_ihr_len(result);
        assert!(n > 40);
        let mut short = vec![0.0; n - 1];
        assert_eq!(
            ihr_result_ihr_copy(result, ptr::null_mut(), short.as_mut_ptr(), short.len()),
            IhrStatus::BufferTooSmall
        );
        let (mut t, mut bpm) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(ihr_result_ihr_copy(result, t.as_mut_ptr(), bpm.as_mut_ptr(), n), IhrStatus::Ok);
        for (ti, b) in t.iter().zip(&bpm) {
            let truth = 60.0 + 30.0 * ti / 60.0;
            assert!((b - truth).abs() < 8.0, "t={ti}: {b} vs {truth}");
        }

        assert_eq!(ihr_result_ppg_len(result), n_t);
        let mut ppg = vec![0.0; n_t];
        assert_eq!(ihr_result_ppg_copy(result, ppg.as_mut_ptr(), n_t), IhrStatus::Ok);
        assert!(ppg.iter().all(|v| v.is_finite()));

        ihr_result_free(result);
        ihr_channels_free(channels);
    }
}

#[test]
fn pure_noise_reports_no_sources() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/noise.toml")).unwrap();
    let (flat, n_r, n_t) = row_major(&MixtureSpec::from_toml(&text).unwrap());
    unsafe {
        let mut channels = ptr::null_mut();
        assert_eq!(ihr_channels_new(flat.as_ptr(), n_r, n_t, 58.0, &mut channels), IhrStatus::Ok);
        let mut result = ptr::null_mut();
        assert_eq!(ihr_run(channels, ptr::null(), &mut result), IhrStatus::NoSources);
        assert!(result.is_null());
        assert!(last_error().contains("no sources retained"));
        ihr_channels_free(channels);
    }
}

#[test]
fn read_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("channels.txt");
    write_channel_matrix(&path, &generate(&chirp_spec()).unwrap().channels).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut channels = ptr::null_mut();
        assert_eq!(ihr_channels_read(c_path.as_ptr(), &mut channels), IhrStatus::Ok);
        assert_eq!(ihr_channels_n_regions(channels), 200);
        ihr_channels_free(channels);

        let missing = CString::new(dir.path().join("nope.txt").to_str().unwrap()).unwrap();
        assert_eq!(ihr_channels_read(missing.as_ptr(), &mut channels), IhrStatus::Io);
        assert!(channels.is_null());
        assert!(last_error().contains("nope.txt"));
    }
}

#[test]
fn argument_errors() {
    unsafe {
        let mut channels = ptr::null_mut();
        assert_eq!(ihr_channels_new(ptr::null(), 2, 2, 58.0, &mut channels), IhrStatus::NullArgument);
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ihr_channels_new(v.as_ptr(), 0, 4, 58.0, &mut channels), IhrStatus::InvalidArgument);
        assert_eq!(ihr_channels_new(v.as_ptr(), 2, 2, -1.0, &mut channels), IhrStatus::InvalidArgument);
        assert!(channels.is_null());
        let nan = [1.0, f64::NAN];
        assert_eq!(ihr_channels_new(nan.as_ptr(), 1, 2, 58.0, &mut channels), IhrStatus::InvalidArgument);

        assert_eq!(ihr_channels_new(v.as_ptr(), 2, 2, 58.0, &mut channels), IhrStatus::Ok);
        let mut config = ihr_config_default();
        config.lambda = -1.0;
        let mut result = ptr::null_mut();
        assert_eq!(ihr_run(channels, &config, &mut result), IhrStatus::InvalidArgument);
        assert!(last_error().contains("lambda"));
        assert_eq!(ihr_run(ptr::null(), &config, &mut result), IhrStatus::NullArgument);
        ihr_channels_free(channels);

        ihr_channels_free(ptr::null_mut());
        ihr_result_free(ptr::null_mut());
        assert_eq!(ihr_result_ihr_len(ptr::null()), 0);
        assert!(ihr_result_pulse_freq_hz(ptr::null()).is_nan());
    }
}

#[test]
fn mp_median_square_case() {
    // For beta = 1, substituting x = 4 sin^2(phi) turns the CDF into
    // (2 / pi) (phi + sin(phi) cos(phi)); bisect that for one half.
    let g = |phi: f64| phi + phi.sin() * phi.cos() - std::f64::consts::FRAC_PI_4;
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let expected = 4.0 * lo.sin().powi(2);

    let mut m = 0.0;
    unsafe {
        assert_eq!(ihr_mp_median(1.0, &mut m), IhrStatus::Ok);
        assert!((m - expected).abs() < 1e-9, "{m} vs {expected}");
        assert_eq!(ihr_mp_median(0.0, &mut m), IhrStatus::InvalidArgument);
        assert_eq!(ihr_mp_median(0.5, ptr::null_mut()), IhrStatus::NullArgument);
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/c_api-<hash>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let lib = target_dir().join("libihr_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "ihr.h"
int main(void) {
    if (ihr_abi_version() != IHR_ABI_VERSION) return 1;
    IhrConfig cfg = ihr_config_default();
    if (cfg.filter_order != 5) return 2;
    double m = 0.0;
    if (ihr_mp_median(1.0, &m) != IHR_STATUS_OK) return 3;
    double v[4] = {1.0, 2.0, 3.0, 4.0};
    IhrChannels *ch = NULL;
    if (ihr_channels_new(v, 2, 2, 58.0, &ch) != IHR_STATUS_OK) return 4;
    IhrResult *res = NULL;
    IhrStatus st = ihr_run(ch, &cfg, &res);
    if (st == IHR_STATUS_OK || res != NULL || ihr_last_error_message() == NULL) return 5;
    ihr_channels_free(ch);
    printf("%.6f\n", m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let printed: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    let mut m = 0.0;
    unsafe { ihr_mp_median(1.0, &mut m) };
    assert!((printed - m).abs() < 1e-6);
}
