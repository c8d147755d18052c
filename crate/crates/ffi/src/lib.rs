//! C ABI over `proxytest`. Handles are opaque; every call returns a status code and the
//! message of the most recent failure on the calling thread is kept for `pt_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use proxytest::bridge_continuous::BridgeMode;
use proxytest::dataset::{Column, Dataset};
use proxytest::harness::{run_test, LambdaChoice, Recentering, TestConfig, TestMode, TestReport};
use proxytest::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvalidConfig = 3,
    Numerical = 4,
    InsufficientData = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtMode {
    ContinuousSingle = 0,
    ContinuousTwoProxy = 1,
    Discrete = 2,
}

/// Observed sample.
pub struct PtDataset(Dataset);

/// Test configuration.
pub struct PtConfig(TestConfig);

/// Outcome of one test run.
pub struct PtReport(TestReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PtStatus {
    match e {
        Error::InvalidInput(_) | Error::BadCell { .. } | Error::MissingColumn(_) | Error::SampleSize(_) => PtStatus::InvalidInput,
        Error::InvalidConfig(_) => PtStatus::InvalidConfig,
        Error::InsufficientData(_) => PtStatus::InsufficientData,
        Error::Io(_) => PtStatus::Io,
        Error::DegenerateBandwidth(_)
        | Error::IllConditioned { .. }
        | Error::Estimation(_)
        | Error::RankDeficient { .. }
        | Error::NoSolution(_)
        | Error::Undefined(_) => PtStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PtStatus, String)>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            PtStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (PtStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (PtStatus, String) {
    (PtStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (PtStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_err(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn codes_column(codes: &[u32]) -> Column {
    let k = codes.iter().max().map_or(0, |&m| m as usize + 1);
    Column::categorical(codes.iter().map(|&c| c as usize).collect(), (0..k).map(|v| v.to_string()).collect())
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn pt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a continuous dataset from three arrays of length `n`.
///
/// # Safety
/// `x`, `y`, `w` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_dataset_new_continuous(
    x: *const f64,
    y: *const f64,
    w: *const f64,
    n: usize,
    out: *mut *mut PtDataset,
) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let d = Dataset::continuous(slice(x, n, "x")?.to_vec(), slice(y, n, "y")?.to_vec(), slice(w, n, "w")?.to_vec());
        d.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PtDataset(d)));
        Ok(())
    })
}

/// Builds a categorical dataset from level codes 0..k-1.
///
/// # Safety
/// `x`, `y`, `w` must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_dataset_new_categorical(
    x: *const u32,
    y: *const u32,
    w: *const u32,
    n: usize,
    out: *mut *mut PtDataset,
) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let d = Dataset {
            x: codes_column(slice(x, n, "x")?),
            y: codes_column(slice(y, n, "y")?),
            w: codes_column(slice(w, n, "w")?),
            z: None,
            covariates: Vec::new(),
        };
        *out = Box::into_raw(Box::new(PtDataset(d)));
        Ok(())
    })
}

/// Attaches a second proxy column.
///
/// # Safety
/// `data` must be a live dataset handle and `z` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_dataset_set_z(data: *mut PtDataset, z: *const f64, n: usize) -> PtStatus {
    guard(|| {
        let d = data.as_mut().ok_or_else(|| null_err("data"))?;
        if n != d.0.n() {
            return Err((PtStatus::InvalidInput, format!("z has {n} rows, dataset has {}", d.0.n())));
        }
        d.0.z = Some(Column::continuous(slice(z, n, "z")?.to_vec()));
        Ok(())
    })
}

/// # Safety
/// `data` must be NULL or a handle from `pt_dataset_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_dataset_free(data: *mut PtDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Default configuration for `mode`: K = 100, t_max = 3, α = 0.05, B = 500, seed 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_config_new(mode: PtMode, out: *mut *mut PtConfig) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let m = match mode {
            PtMode::ContinuousSingle => TestMode::ContinuousSingle,
            PtMode::ContinuousTwoProxy => TestMode::ContinuousTwoProxy,
            PtMode::Discrete => TestMode::Discrete,
        };
        *out = Box::into_raw(Box::new(PtConfig(TestConfig::new(m))));
        Ok(())
    })
}

unsafe fn with_config(cfg: *mut PtConfig, f: impl FnOnce(&mut TestConfig) -> Result<(), String>) -> PtStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null_err("config"))?;
        f(&mut c.0).map_err(|m| (PtStatus::InvalidConfig, m))
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_alpha(cfg: *mut PtConfig, alpha: f64) -> PtStatus {
    with_config(cfg, |c| {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {alpha}"));
        }
        c.bootstrap.alpha = alpha;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_replications(cfg: *mut PtConfig, b: usize) -> PtStatus {
    with_config(cfg, |c| {
        if b == 0 {
            return Err("B must be at least 1".into());
        }
        c.bootstrap.replications = b;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_seed(cfg: *mut PtConfig, seed: u64) -> PtStatus {
    with_config(cfg, |c| {
        c.bootstrap.seed = seed;
        Ok(())
    })
}

/// Grid size K and upper end t_max of the t grid.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_grid(cfg: *mut PtConfig, k: usize, t_max: f64) -> PtStatus {
    with_config(cfg, |c| {
        if k == 0 || !(t_max > 0.0) {
            return Err("K must be positive and t_max > 0".into());
        }
        c.k = k;
        c.t_max = t_max;
        Ok(())
    })
}

/// Fixes λ; a non-positive value restores cross-validation.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_lambda(cfg: *mut PtConfig, lambda: f64) -> PtStatus {
    with_config(cfg, |c| {
        c.lambda = if lambda > 0.0 { LambdaChoice::Fixed(lambda) } else { TestConfig::new(c.mode).lambda };
        Ok(())
    })
}

/// Switches the continuous bridge to the first-moment restriction (true) or back.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_first_moment(cfg: *mut PtConfig, on: bool) -> PtStatus {
    with_config(cfg, |c| {
        c.bridge = if on { BridgeMode::Mmr } else { BridgeMode::Pmcr };
        Ok(())
    })
}

/// Disables (true) the projection of bootstrap multipliers through the estimator.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn pt_config_set_plain_bootstrap(cfg: *mut PtConfig, on: bool) -> PtStatus {
    with_config(cfg, |c| {
        c.recentering = if on { Recentering::Plain } else { Recentering::Projected };
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `pt_config_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_config_free(cfg: *mut PtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the test. On success `*out` owns a report to release with `pt_report_free`.
///
/// # Safety
/// `data` and `cfg` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_run_test(data: *const PtDataset, cfg: *const PtConfig, out: *mut *mut PtReport) -> PtStatus {
    guard(|| {
        let d = data.as_ref().ok_or_else(|| null_err("data"))?;
        let c = cfg.as_ref().ok_or_else(|| null_err("config"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let r = run_test(&d.0, &c.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PtReport(r)));
        Ok(())
    })
}

/// Reads the main numbers of a report; any output pointer may be NULL.
///
/// # Safety
/// `report` must be a live report handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_report_values(
    report: *const PtReport,
    statistic: *mut f64,
    critical_value: *mut f64,
    p_value: *mut f64,
    reject: *mut bool,
) -> PtStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null_err("report"))?.0;
        if let Some(s) = statistic.as_mut() {
            *s = r.statistic.delta;
        }
        if let Some(s) = critical_value.as_mut() {
            *s = r.critical_value;
        }
        if let Some(s) = p_value.as_mut() {
            *s = r.p_value;
        }
        if let Some(s) = reject.as_mut() {
            *s = r.reject;
        }
        Ok(())
    })
}

/// Serializes the full report. Release the string with `pt_string_free`.
///
/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_report_json(report: *const PtReport, out: *mut *mut c_char) -> PtStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null_err("report"))?.0;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let s = serde_json::to_string(r).map_err(|e| (PtStatus::Io, e.to_string()))?;
        *out = CString::new(s).map_err(|e| (PtStatus::Io, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from `pt_run_test` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_report_free(report: *mut PtReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies the last error into a Rust string; for tests and Rust callers.
pub fn last_error_string() -> Option<String> {
    let p = pt_last_error();
    if p.is_null() {
        None
    } else {
        // SAFETY: the pointer comes from a live thread-local CString.
        Some(unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }
}
