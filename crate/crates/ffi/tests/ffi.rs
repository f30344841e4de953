use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bpcorr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bpcorr_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn r(sbp: f64, dbp: f64) -> BpcorrReading {
    BpcorrReading { sbp, dbp }
}

fn reference_model() -> *mut BpcorrNoiseModel {
    let mut h = ptr::null_mut();
    let s = unsafe { bpcorr_noise_model_from_moments(-9.29, 6.29, 7.39, 4.70, 0.5, &mut h) };
    assert_eq!(s, BpcorrStatus::Ok);
    h
}

#[test]
fn ml_single_reading_example() {
    let h = reference_model();
    let mut out = r(0.0, 0.0);
    let s = unsafe { bpcorr_ml_estimate(&r(110.0, 85.0), 1, h, &mut out) };
    assert_eq!(s, BpcorrStatus::Ok);
    assert!((out.sbp - 119.29).abs() < 1e-12 && (out.dbp - 78.71).abs() < 1e-12);
    assert_eq!(last_error(), "");
    unsafe { bpcorr_noise_model_free(h) };
}

#[test]
fn ls_mean_and_empty_set() {
    let xs = [r(100.0, 70.0), r(110.0, 80.0), r(120.0, 90.0)];
    let mut out = r(0.0, 0.0);
    assert_eq!(
        unsafe { bpcorr_ls_estimate(xs.as_ptr(), 3, &mut out) },
        BpcorrStatus::Ok
    );
    assert_eq!(out, r(110.0, 80.0));
    assert_eq!(
        unsafe { bpcorr_ls_estimate(ptr::null(), 0, &mut out) },
        BpcorrStatus::InsufficientData
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { bpcorr_ls_estimate(ptr::null(), 2, &mut out) },
        BpcorrStatus::NullPointer
    );
}

#[test]
fn json_round_trip_and_params() {
    let json = CString::new(
        r#"{"mu_sbp_mmhg":-9.29,"mu_dbp_mmhg":6.29,"cov":[[4.0,1.0],[1.0,2.0]],"n_pairs":7,"convention":"measured_minus_true"}"#,
    )
    .unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { bpcorr_noise_model_from_json(json.as_ptr(), &mut h) },
        BpcorrStatus::Ok
    );
    let (mut mu, mut cov) = ([0.0; 2], [0.0; 4]);
    assert_eq!(
        unsafe { bpcorr_noise_model_params(h, mu.as_mut_ptr(), cov.as_mut_ptr()) },
        BpcorrStatus::Ok
    );
    assert_eq!(mu, [-9.29, 6.29]);
    assert_eq!(cov, [4.0, 1.0, 1.0, 2.0]);
    unsafe { bpcorr_noise_model_free(h) };

    let bad = CString::new(r#"{"mu_sbp_mmhg":1}"#).unwrap();
    let mut h2 = ptr::null_mut();
    assert_eq!(
        unsafe { bpcorr_noise_model_from_json(bad.as_ptr(), &mut h2) },
        BpcorrStatus::ParseError
    );
    assert!(h2.is_null());
    let not_psd = CString::new(
        r#"{"mu_sbp_mmhg":0,"mu_dbp_mmhg":0,"cov":[[1.0,5.0],[5.0,1.0]],"n_pairs":0,"convention":"measured_minus_true"}"#,
    )
    .unwrap();
    assert_eq!(
        unsafe { bpcorr_noise_model_from_json(not_psd.as_ptr(), &mut h2) },
        BpcorrStatus::ParseError
    );
}

#[test]
fn fit_matches_hand_computation() {
    let measured = [r(118.0, 81.0), r(130.0, 73.0)];
    let truth = [r(120.0, 80.0), r(130.0, 70.0)];
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { bpcorr_noise_model_fit(measured.as_ptr(), truth.as_ptr(), 2, &mut h) },
        BpcorrStatus::Ok
    );
    let (mut mu, mut cov) = ([0.0; 2], [0.0; 4]);
    unsafe { bpcorr_noise_model_params(h, mu.as_mut_ptr(), cov.as_mut_ptr()) };
    assert_eq!(mu, [-1.0, 2.0]);
    assert_eq!(cov, [2.0, 2.0, 2.0, 2.0]);
    unsafe { bpcorr_noise_model_free(h) };
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { bpcorr_noise_model_fit(measured.as_ptr(), truth.as_ptr(), 1, &mut h) },
        BpcorrStatus::InsufficientData
    );
}

#[test]
fn moments_validation() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { bpcorr_noise_model_from_moments(0.0, 0.0, 1.0, 1.0, 1.5, &mut h) },
        BpcorrStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { bpcorr_noise_model_from_moments(0.0, 0.0, 1.0, 1.0, 0.0, ptr::null_mut()) },
        BpcorrStatus::NullPointer
    );
    unsafe { bpcorr_noise_model_free(ptr::null_mut()) };
}

#[test]
fn simulate_constant_and_errors() {
    let x = vec![100.0; 7500];
    let mut out = r(0.0, 0.0);
    assert_eq!(
        unsafe { bpcorr_simulate_reading(x.as_ptr(), x.len(), 125.0, 180.0, 2.5, &mut out) },
        BpcorrStatus::Ok
    );
    assert!((out.sbp - 100.0).abs() < 1e-9 && (out.dbp - 100.0).abs() < 1e-9);
    assert_eq!(
        unsafe { bpcorr_simulate_reading(x.as_ptr(), x.len(), 125.0, 90.0, 2.5, &mut out) },
        BpcorrStatus::CuffTooLow
    );
    let low = vec![10.0; 7500];
    assert_eq!(
        unsafe { bpcorr_simulate_reading(low.as_ptr(), low.len(), 125.0, 180.0, 2.5, &mut out) },
        BpcorrStatus::NoIntersection
    );
    let wide: Vec<f64> = (0..7500).map(|i| 60.0 + 40.0 * (i as f64 * 0.06).sin()).collect();
    assert_eq!(
        unsafe { bpcorr_simulate_reading(wide.as_ptr(), wide.len(), 125.0, 180.0, 2.5, &mut out) },
        BpcorrStatus::DbpUnreachable
    );
    assert_eq!(
        unsafe { bpcorr_simulate_reading(x.as_ptr(), x.len(), 125.0, 180.0, -1.0, &mut out) },
        BpcorrStatus::InvalidArgument
    );
}

#[test]
fn decode_buffers() {
    let bytes = [0x01u8, 0x20, 0x03];
    let mut n = 0usize;
    assert_eq!(
        unsafe { bpcorr_decode_format212(bytes.as_ptr(), 3, ptr::null_mut(), 0, &mut n) },
        BpcorrStatus::Ok
    );
    assert_eq!(n, 2);
    let mut small = [0i32; 1];
    assert_eq!(
        unsafe { bpcorr_decode_format212(bytes.as_ptr(), 3, small.as_mut_ptr(), 1, &mut n) },
        BpcorrStatus::BufferTooSmall
    );
    let mut buf = [0i32; 2];
    assert_eq!(
        unsafe { bpcorr_decode_format212(bytes.as_ptr(), 3, buf.as_mut_ptr(), 2, &mut n) },
        BpcorrStatus::Ok
    );
    assert_eq!(buf, [1, 515]);
    assert_eq!(
        unsafe { bpcorr_decode_format212(bytes.as_ptr(), 2, buf.as_mut_ptr(), 2, &mut n) },
        BpcorrStatus::ParseError
    );
    let le = [0x00u8, 0x80, 0xff, 0x7f];
    assert_eq!(
        unsafe { bpcorr_decode_format16(le.as_ptr(), 4, buf.as_mut_ptr(), 2, &mut n) },
        BpcorrStatus::Ok
    );
    assert_eq!(buf, [-32768, 32767]);
}

#[test]
fn saturation_boundary() {
    let fs = 125.0;
    let mut x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin() * 20.0 + 100.0).collect();
    let mut flag = true;
    x[100..162].fill(90.0);
    assert_eq!(
        unsafe { bpcorr_detect_saturation(x.as_ptr(), x.len(), fs, &mut flag) },
        BpcorrStatus::Ok
    );
    assert!(!flag);
    x[100..163].fill(90.0);
    unsafe { bpcorr_detect_saturation(x.as_ptr(), x.len(), fs, &mut flag) };
    assert!(flag);
}

#[test]
fn pp_map_values() {
    let (mut pp, mut map) = (0.0, 0.0);
    assert_eq!(
        unsafe { bpcorr_pp_map(r(120.0, 80.0), &mut pp, &mut map) },
        BpcorrStatus::Ok
    );
    assert_eq!(pp, 40.0);
    assert!((map - 280.0 / 3.0).abs() < 1e-12);
    assert_eq!(
        unsafe { bpcorr_pp_map(r(120.0, 80.0), ptr::null_mut(), &mut map) },
        BpcorrStatus::NullPointer
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(bpcorr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bpcorr.h");
    assert!(header.is_file());
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "bpcorr_ml_estimate",
        "bpcorr_noise_model_free",
        "BPCORR_STATUS_OK",
        "typedef struct BpcorrNoiseModel BpcorrNoiseModel",
    ] {
        assert!(text.contains(sym), "{sym}");
    }
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(probe.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"bpcorr.h\"\nint main(void) { BpcorrNoiseModel *m = 0; BpcorrReading r = {110.0, 85.0}, o;\n\
         if (bpcorr_noise_model_from_moments(-9.29, 6.29, 7.39, 4.7, 0.5, &m) != BPCORR_STATUS_OK) return 1;\n\
         bpcorr_ml_estimate(&r, 1, m, &o); bpcorr_noise_model_free(m); return 0; }\n",
    )
    .unwrap();
    let st = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}
