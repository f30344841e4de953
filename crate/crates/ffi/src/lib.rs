//! C ABI over the `bpcorr` core.
//!
//! Every fallible call returns a [`BpcorrStatus`]; on failure a message is
//! available from [`bpcorr_last_error`] on the calling thread. Noise models
//! are opaque heap handles released with [`bpcorr_noise_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bpcorr::estimation::{
    derive_pp_map, estimate_noise_model, ls_estimate, ml_estimate, EstimationError, MeasurementSet, NoiseModel,
};
use bpcorr::oscillometry::{simulate_samples, CuffProfile, SimErrorKind};
use bpcorr::quality_control::{detect_saturation, BpReading};
use bpcorr::waveform_io::{decode_format16, decode_format212};

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpcorrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    InvalidCovariance = 4,
    ParseError = 5,
    BufferTooSmall = 6,
    CuffTooLow = 7,
    NoIntersection = 8,
    DbpUnreachable = 9,
    InsufficientCrossings = 10,
    Panic = 99,
}

/// One (SBP, DBP) pair in mmHg.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpcorrReading {
    pub sbp: f64,
    pub dbp: f64,
}

impl From<BpcorrReading> for BpReading {
    fn from(r: BpcorrReading) -> Self {
        BpReading::new(r.sbp, r.dbp)
    }
}

impl From<BpReading> for BpcorrReading {
    fn from(r: BpReading) -> Self {
        Self { sbp: r.sbp, dbp: r.dbp }
    }
}

/// Opaque measurement-noise model.
pub struct BpcorrNoiseModel {
    inner: NoiseModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: BpcorrStatus, msg: impl Into<String>) -> BpcorrStatus {
    set_error(msg);
    status
}

fn estimation_status(e: &EstimationError) -> BpcorrStatus {
    match e {
        EstimationError::InsufficientData { .. } | EstimationError::EmptySet => BpcorrStatus::InsufficientData,
        EstimationError::InvalidCovariance => BpcorrStatus::InvalidCovariance,
        _ => BpcorrStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> BpcorrStatus) -> BpcorrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == BpcorrStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(BpcorrStatus::Panic, "internal panic"),
    }
}

/// Borrows `len` elements, treating `len == 0` as an empty slice even when
/// `ptr` is null.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn store_model(out: *mut *mut BpcorrNoiseModel, m: NoiseModel) {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(BpcorrNoiseModel { inner: m })) };
}

/// Human-readable message for the last failed call on this thread. Empty
/// after a success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bpcorr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bpcorr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a model with mean `(mu_sbp, mu_dbp)`, SDs and correlation `rho`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_noise_model_from_moments(
    mu_sbp: f64,
    mu_dbp: f64,
    sd_sbp: f64,
    sd_dbp: f64,
    rho: f64,
    out: *mut *mut BpcorrNoiseModel,
) -> BpcorrStatus {
    guard(|| {
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        if !(sd_sbp >= 0.0 && sd_dbp >= 0.0 && (-1.0..=1.0).contains(&rho)) {
            return fail(BpcorrStatus::InvalidArgument, "SDs must be >= 0 and rho in [-1, 1]");
        }
        match NoiseModel::from_moments([mu_sbp, mu_dbp], [sd_sbp, sd_dbp], rho) {
            Ok(m) => {
                store_model(out, m);
                BpcorrStatus::Ok
            }
            Err(e) => fail(estimation_status(&e), e.to_string()),
        }
    })
}

/// Parses a noise model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_noise_model_from_json(
    json: *const c_char,
    out: *mut *mut BpcorrNoiseModel,
) -> BpcorrStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(BpcorrStatus::NullPointer, "json or out is null");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(BpcorrStatus::ParseError, "json is not valid UTF-8");
        };
        match NoiseModel::from_json(text) {
            Ok(m) => {
                store_model(out, m);
                BpcorrStatus::Ok
            }
            Err(e) => fail(BpcorrStatus::ParseError, e.to_string()),
        }
    })
}

/// Fits a model from `n` (measured, truth) pairs; needs `n >= 2`.
///
/// # Safety
/// `measured` and `truth` must each point to `n` readings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_noise_model_fit(
    measured: *const BpcorrReading,
    truth: *const BpcorrReading,
    n: usize,
    out: *mut *mut BpcorrNoiseModel,
) -> BpcorrStatus {
    guard(|| {
        let (Some(m), Some(t)) = (slice(measured, n), slice(truth, n)) else {
            return fail(BpcorrStatus::NullPointer, "measured or truth is null");
        };
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        let pairs: Vec<_> = m
            .iter()
            .zip(t)
            .map(|(a, b)| (BpReading::from(*a), BpReading::from(*b)))
            .collect();
        match estimate_noise_model(&pairs) {
            Ok(model) => {
                store_model(out, model);
                BpcorrStatus::Ok
            }
            Err(e) => fail(estimation_status(&e), e.to_string()),
        }
    })
}

/// Copies the mean into `mu[0..2]` and the row-major covariance into `cov[0..4]`.
/// Either output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable for 2 and 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_noise_model_params(
    model: *const BpcorrNoiseModel,
    mu: *mut f64,
    cov: *mut f64,
) -> BpcorrStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(BpcorrStatus::NullPointer, "model is null");
        };
        if !mu.is_null() {
            std::ptr::copy_nonoverlapping(m.inner.mu.as_ptr(), mu, 2);
        }
        if !cov.is_null() {
            let c = m.inner.cov;
            std::ptr::copy_nonoverlapping([c[0][0], c[0][1], c[1][0], c[1][1]].as_ptr(), cov, 4);
        }
        BpcorrStatus::Ok
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_noise_model_free(model: *mut BpcorrNoiseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn measurement_set(readings: *const BpcorrReading, n: usize) -> Result<MeasurementSet, BpcorrStatus> {
    let Some(rs) = slice(readings, n) else {
        return Err(fail(BpcorrStatus::NullPointer, "readings is null"));
    };
    MeasurementSet::new("ffi", rs.iter().map(|r| BpReading::from(*r)).collect())
        .map_err(|e| fail(estimation_status(&e), e.to_string()))
}

/// Mean of `n` repeated readings.
///
/// # Safety
/// `readings` must point to `n` readings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_ls_estimate(
    readings: *const BpcorrReading,
    n: usize,
    out: *mut BpcorrReading,
) -> BpcorrStatus {
    guard(|| {
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        let set = match measurement_set(readings, n) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ls_estimate(&set) {
            Ok(r) => {
                *out = r.into();
                BpcorrStatus::Ok
            }
            Err(e) => fail(estimation_status(&e), e.to_string()),
        }
    })
}

/// Mean of `n` repeated readings minus the model's mean error.
///
/// # Safety
/// `readings` must point to `n` readings, `model` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_ml_estimate(
    readings: *const BpcorrReading,
    n: usize,
    model: *const BpcorrNoiseModel,
    out: *mut BpcorrReading,
) -> BpcorrStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(BpcorrStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        let set = match measurement_set(readings, n) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ml_estimate(&set, &m.inner) {
            Ok(r) => {
                *out = r.into();
                BpcorrStatus::Ok
            }
            Err(e) => fail(estimation_status(&e), e.to_string()),
        }
    })
}

/// Simulated cuff reading of `n` pressure samples at `fs` Hz under a linear
/// deflation from `initial_pressure` at `deflation_rate` mmHg/s.
///
/// # Safety
/// `samples` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_simulate_reading(
    samples: *const f64,
    n: usize,
    fs: f64,
    initial_pressure: f64,
    deflation_rate: f64,
    out: *mut BpcorrReading,
) -> BpcorrStatus {
    guard(|| {
        let Some(x) = slice(samples, n) else {
            return fail(BpcorrStatus::NullPointer, "samples is null");
        };
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        if !(fs > 0.0 && fs.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return fail(BpcorrStatus::InvalidArgument, "fs must be positive and samples finite");
        }
        let profile = match CuffProfile::new(initial_pressure, deflation_rate) {
            Ok(p) => p,
            Err(e) => return fail(BpcorrStatus::InvalidArgument, e.to_string()),
        };
        match simulate_samples(x, fs, &profile) {
            Ok((r, _, _)) => {
                *out = r.into();
                BpcorrStatus::Ok
            }
            Err(e) => {
                let status = match e.kind() {
                    SimErrorKind::CuffTooLow => BpcorrStatus::CuffTooLow,
                    SimErrorKind::NoIntersection => BpcorrStatus::NoIntersection,
                    SimErrorKind::DbpUnreachable => BpcorrStatus::DbpUnreachable,
                    SimErrorKind::InsufficientCrossings => BpcorrStatus::InsufficientCrossings,
                    _ => BpcorrStatus::InvalidArgument,
                };
                fail(status, e.to_string())
            }
        }
    })
}

unsafe fn decode_into(
    bytes: *const u8,
    len: usize,
    out: *mut i32,
    out_cap: usize,
    out_len: *mut usize,
    decode: fn(&[u8]) -> bpcorr::waveform_io::Result<Vec<i32>>,
) -> BpcorrStatus {
    guard(|| {
        let Some(b) = slice(bytes, len) else {
            return fail(BpcorrStatus::NullPointer, "bytes is null");
        };
        if out_len.is_null() {
            return fail(BpcorrStatus::NullPointer, "out_len is null");
        }
        let samples = match decode(b) {
            Ok(s) => s,
            Err(e) => return fail(BpcorrStatus::ParseError, e.to_string()),
        };
        *out_len = samples.len();
        if out.is_null() && out_cap == 0 {
            return BpcorrStatus::Ok;
        }
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        if out_cap < samples.len() {
            return fail(
                BpcorrStatus::BufferTooSmall,
                format!("need {} samples, capacity {out_cap}", samples.len()),
            );
        }
        std::ptr::copy_nonoverlapping(samples.as_ptr(), out, samples.len());
        BpcorrStatus::Ok
    })
}

/// Decodes a packed 12-bit (format 212) stream into raw ADC values. Pass a
/// null `out` with `out_cap == 0` to query the sample count via `out_len`.
///
/// # Safety
/// `bytes` must point to `len` bytes, `out` to `out_cap` writable ints, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_decode_format212(
    bytes: *const u8,
    len: usize,
    out: *mut i32,
    out_cap: usize,
    out_len: *mut usize,
) -> BpcorrStatus {
    decode_into(bytes, len, out, out_cap, out_len, decode_format212)
}

/// Decodes little-endian 16-bit (format 16) samples; same buffer protocol
/// as [`bpcorr_decode_format212`].
///
/// # Safety
/// As for [`bpcorr_decode_format212`].
#[no_mangle]
pub unsafe extern "C" fn bpcorr_decode_format16(
    bytes: *const u8,
    len: usize,
    out: *mut i32,
    out_cap: usize,
    out_len: *mut usize,
) -> BpcorrStatus {
    decode_into(bytes, len, out, out_cap, out_len, decode_format16)
}

/// Sets `*out` to whether the samples contain a flat run of at least 0.5 s.
///
/// # Safety
/// `samples` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_detect_saturation(
    samples: *const f64,
    n: usize,
    fs: f64,
    out: *mut bool,
) -> BpcorrStatus {
    guard(|| {
        let Some(x) = slice(samples, n) else {
            return fail(BpcorrStatus::NullPointer, "samples is null");
        };
        if out.is_null() {
            return fail(BpcorrStatus::NullPointer, "out is null");
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return fail(BpcorrStatus::InvalidArgument, "fs must be positive");
        }
        *out = detect_saturation(x, fs);
        BpcorrStatus::Ok
    })
}

/// Pulse pressure and mean arterial pressure of one reading.
///
/// # Safety
/// `pp` and `map` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpcorr_pp_map(reading: BpcorrReading, pp: *mut f64, map: *mut f64) -> BpcorrStatus {
    guard(|| {
        if pp.is_null() || map.is_null() {
            return fail(BpcorrStatus::NullPointer, "pp or map is null");
        }
        let v = derive_pp_map(&reading.into());
        *pp = v.pp;
        *map = v.map;
        BpcorrStatus::Ok
    })
}
