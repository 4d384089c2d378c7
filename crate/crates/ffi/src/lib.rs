//! C ABI over the coms2t experiment runner and theory checks.
//!
//! Every function returns a [`Coms2tStatus`]; results come back through
//! out-pointers. Configurations and reports are opaque heap handles that the
//! caller releases with the matching `*_free` function. On failure the
//! message of the last error raised on the calling thread is available from
//! [`coms2t_last_error`]. Panics never cross the boundary: they are caught
//! and reported as [`Coms2tStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use coms2t::experiment::{run_variants, ExperimentConfig, ExperimentReport, Variant};
use coms2t::theory::{amplification_ratio, theory_check, CausalNeighborhoodSpec, TheoryCheckConfig};
use coms2t::Error;

/// Result codes of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coms2tStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid configuration, schema violation or unreadable input.
    Config = 3,
    /// Non-finite values, divergence or a singular closed form.
    Numerics = 4,
    /// Any other pipeline failure (shapes, I/O, reports, ...).
    Runtime = 5,
    /// The requested variant is not part of the report.
    NotFound = 6,
    /// The library panicked; the handle arguments should be discarded.
    Panic = 7,
}

/// Opaque experiment configuration.
pub struct Coms2tConfig {
    inner: ExperimentConfig,
}

/// Opaque experiment report.
pub struct Coms2tReport {
    inner: ExperimentReport,
}

/// One node's neighborhood and observation moments for the closed-form
/// error-amplification theory. `d` must exceed 1 and `p` lie in (0, 1).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct Coms2tNeighborhood {
    pub d: usize,
    pub p: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu_t: f64,
    pub mu_next: f64,
    pub mu_c: f64,
    pub mu_s: f64,
    pub w_c: f64,
    pub w_s: f64,
    pub q: f64,
    pub mu_w: f64,
    pub sigma_w: f64,
}

impl From<CausalNeighborhoodSpec> for Coms2tNeighborhood {
    fn from(s: CausalNeighborhoodSpec) -> Self {
        Coms2tNeighborhood {
            d: s.d,
            p: s.p,
            mu0: s.mu0,
            sigma0: s.sigma0,
            mu_t: s.mu_t,
            mu_next: s.mu_next,
            mu_c: s.mu_c,
            mu_s: s.mu_s,
            w_c: s.w_c,
            w_s: s.w_s,
            q: s.q,
            mu_w: s.mu_w,
            sigma_w: s.sigma_w,
        }
    }
}

impl From<Coms2tNeighborhood> for CausalNeighborhoodSpec {
    fn from(s: Coms2tNeighborhood) -> Self {
        CausalNeighborhoodSpec {
            d: s.d,
            p: s.p,
            mu0: s.mu0,
            sigma0: s.sigma0,
            mu_t: s.mu_t,
            mu_next: s.mu_next,
            mu_c: s.mu_c,
            mu_s: s.mu_s,
            w_c: s.w_c,
            w_s: s.w_s,
            q: s.q,
            mu_w: s.mu_w,
            sigma_w: s.sigma_w,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(Coms2tStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => Coms2tStatus::Config,
            3 => Coms2tStatus::Numerics,
            _ => Coms2tStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `body`, records its failure message and converts panics.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> Coms2tStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => Coms2tStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            Coms2tStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(Coms2tStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|e| Failure(Coms2tStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { ptr.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { ptr.as_ref() }.ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null if none occurred.
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn coms2t_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Writes a new handle holding the small desk-scale preset to `*out`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_config_desk_scale(out: *mut *mut Coms2tConfig) -> Coms2tStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = Box::into_raw(Box::new(Coms2tConfig { inner: ExperimentConfig::desk_scale() }));
        Ok(())
    })
}

/// Parses and validates a JSON experiment configuration; missing fields
/// take their defaults.
///
/// # Safety
/// `json` must be null or a NUL-terminated string; `out` must be null or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_config_from_json(json: *const c_char, out: *mut *mut Coms2tConfig) -> Coms2tStatus {
    guard(|| {
        let text = unsafe { read_str(json, "json") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let inner = ExperimentConfig::from_json(text)?;
        *out = Box::into_raw(Box::new(Coms2tConfig { inner }));
        Ok(())
    })
}

/// Replaces the seed list of a configuration.
///
/// # Safety
/// `config` must be a live handle or null; `seeds` must point to `len`
/// readable values.
#[no_mangle]
pub unsafe extern "C" fn coms2t_config_set_seeds(config: *mut Coms2tConfig, seeds: *const u64, len: usize) -> Coms2tStatus {
    guard(|| {
        let config = unsafe { out_ref(config, "config") }?;
        if seeds.is_null() || len == 0 {
            return Err(Failure(Coms2tStatus::Config, "at least one seed is required".into()));
        }
        config.inner.seeds = unsafe { std::slice::from_raw_parts(seeds, len) }.to_vec();
        Ok(())
    })
}

/// Serializes a configuration to JSON; release the string with
/// [`coms2t_string_free`].
///
/// # Safety
/// `config` must be a live handle or null; `out` must be null or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_config_to_json(config: *const Coms2tConfig, out: *mut *mut c_char) -> Coms2tStatus {
    guard(|| {
        let config = unsafe { handle(config, "config") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let text = serde_json::to_string_pretty(&config.inner).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coms2t_config_free(config: *mut Coms2tConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Trains and evaluates the variants named in `variants` (comma-separated,
/// e.g. `"full,non_ttf"`; null runs all five) over every configured seed.
/// When `out_dir` is non-null the run directories and `report.json` are
/// written there.
///
/// # Safety
/// `config` must be a live handle; `variants` and `out_dir` must be null or
/// NUL-terminated; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_run_variants(
    config: *const Coms2tConfig,
    variants: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut Coms2tReport,
) -> Coms2tStatus {
    guard(|| {
        let config = unsafe { handle(config, "config") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let list = if variants.is_null() {
            Variant::ALL.to_vec()
        } else {
            unsafe { read_str(variants, "variants") }?.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<Variant>, Error>>()?
        };
        let dir = if out_dir.is_null() { None } else { Some(PathBuf::from(unsafe { read_str(out_dir, "out_dir") }?)) };
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(Error::from)?;
        }
        let inner = run_variants(&config.inner, &list, dir.as_deref())?;
        *out = Box::into_raw(Box::new(Coms2tReport { inner }));
        Ok(())
    })
}

/// Loads a `report.json` written by a previous run.
///
/// # Safety
/// `path` must be null or NUL-terminated; `out` must be null or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_report_load(path: *const c_char, out: *mut *mut Coms2tReport) -> Coms2tStatus {
    guard(|| {
        let path = unsafe { read_str(path, "path") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let inner = ExperimentReport::read_json(path)?;
        *out = Box::into_raw(Box::new(Coms2tReport { inner }));
        Ok(())
    })
}

/// Mean and standard deviation over seeds of one variant's test MAE.
///
/// # Safety
/// `report` must be a live handle; `variant` NUL-terminated; `mean` and
/// `std` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_report_test_mae(
    report: *const Coms2tReport,
    variant: *const c_char,
    mean: *mut f64,
    std: *mut f64,
) -> Coms2tStatus {
    guard(|| {
        let report = unsafe { handle(report, "report") }?;
        let name = unsafe { read_str(variant, "variant") }?;
        let v: Variant = name.parse()?;
        let (mean, std) = (unsafe { out_ref(mean, "mean") }?, unsafe { out_ref(std, "std") }?);
        let summary = report.inner.variant(v).ok_or_else(|| Failure(Coms2tStatus::NotFound, format!("variant {name} is not in the report")))?;
        *mean = summary.test_mae_mean;
        *std = summary.test_mae_std;
        Ok(())
    })
}

/// Serializes a report to JSON; release the string with
/// [`coms2t_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_report_to_json(report: *const Coms2tReport, out: *mut *mut c_char) -> Coms2tStatus {
    guard(|| {
        let report = unsafe { handle(report, "report") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let text = serde_json::to_string_pretty(&report.inner).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coms2t_report_free(report: *mut Coms2tReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coms2t_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Writes the default neighborhood (degree 4, half causal, q = 3).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_neighborhood_default(out: *mut Coms2tNeighborhood) -> Coms2tStatus {
    guard(|| {
        *unsafe { out_ref(out, "out") }? = CausalNeighborhoodSpec::default().into();
        Ok(())
    })
}

/// Closed-form ratio of the shifted to the in-distribution aggregation
/// error; equals `q` for every valid neighborhood.
///
/// # Safety
/// `spec` must be null or readable; `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_amplification_ratio(spec: *const Coms2tNeighborhood, out: *mut f64) -> Coms2tStatus {
    guard(|| {
        let spec: CausalNeighborhoodSpec = (*unsafe { handle(spec, "spec") }?).into();
        let out = unsafe { out_ref(out, "out") }?;
        spec.validate()?;
        *out = amplification_ratio(&spec)?;
        Ok(())
    })
}

/// Runs the closed-form and Monte-Carlo theory checks. `json` (nullable)
/// overrides the default check configuration; `*passed` receives 1 when
/// every check is within tolerance and 0 otherwise.
///
/// # Safety
/// `json` must be null or NUL-terminated; `passed` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coms2t_theory_check(json: *const c_char, passed: *mut i32) -> Coms2tStatus {
    guard(|| {
        let cfg: TheoryCheckConfig = if json.is_null() {
            TheoryCheckConfig::default()
        } else {
            let text = unsafe { read_str(json, "json") }?;
            serde_json::from_str(text).map_err(|e| Failure(Coms2tStatus::Config, format!("theory check config: {e}")))?
        };
        let passed = unsafe { out_ref(passed, "passed") }?;
        *passed = i32::from(theory_check(&cfg)?.passed());
        Ok(())
    })
}
