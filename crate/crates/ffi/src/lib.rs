//! C ABI over `rkl-core`.
//!
//! Every function returns an [`RklStatus`]; results come back through out-pointers.
//! Handles are opaque and must be released with their `_free` function.
//! The message of the last failure on the calling thread is available from
//! [`rkl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;
use rkl_core::bergman::{build_bergman_space, kernel_diag, BergmanSpace, PlanarDomain};
use rkl_core::cli::run::report_json;
use rkl_core::cli::{execute, parse_with_overrides, run, CliError, RunConfig};
use rkl_core::Error;

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RklStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

/// Bergman space of a planar disc or annulus.
pub struct RklBergman(BergmanSpace);

/// Parsed run configuration.
pub struct RklConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn core_status(e: &Error) -> RklStatus {
    set_error(e.to_string());
    match e {
        Error::Domain(_) | Error::Precondition(_) | Error::Input(_) | Error::Unsupported(_) | Error::Metric { .. } | Error::Truncation { .. } => {
            RklStatus::InvalidArgument
        }
        _ => RklStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> RklStatus) -> RklStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            RklStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, RklStatus> {
    if p.is_null() {
        set_error("null string");
        return Err(RklStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        RklStatus::InvalidArgument
    })
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!(stringify!($p), " is null"));
            return RklStatus::NullPointer;
        })+
    };
}

/// Message of the last failure on this thread; empty after success. Owned by the library.
#[no_mangle]
pub extern "C" fn rkl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn bergman_new(domain: rkl_core::Result<PlanarDomain>, n: usize, out: *mut *mut RklBergman) -> RklStatus {
    nonnull!(out);
    guard(|| match domain.and_then(|d| build_bergman_space(&d, n)) {
        Ok(s) => {
            unsafe { *out = Box::into_raw(Box::new(RklBergman(s))) };
            RklStatus::Ok
        }
        Err(e) => core_status(&e),
    })
}

/// Bergman space of the disc |z - c| < rho with `n` basis functions.
#[no_mangle]
pub extern "C" fn rkl_bergman_disc_new(cx: f64, cy: f64, rho: f64, n: usize, out: *mut *mut RklBergman) -> RklStatus {
    bergman_new(PlanarDomain::disc(Complex64::new(cx, cy), rho), n, out)
}

/// Bergman space of the annulus r_in < |z - c| < r_out with `n` basis functions.
#[no_mangle]
pub extern "C" fn rkl_bergman_annulus_new(cx: f64, cy: f64, r_in: f64, r_out: f64, n: usize, out: *mut *mut RklBergman) -> RklStatus {
    bergman_new(PlanarDomain::annulus(Complex64::new(cx, cy), r_in, r_out), n, out)
}

/// Diagonal kernel K(z, z).
///
/// # Safety
/// `space` must come from a `rkl_bergman_*_new` call and not be freed.
#[no_mangle]
pub unsafe extern "C" fn rkl_bergman_kernel_diag(space: *const RklBergman, x: f64, y: f64, out: *mut f64) -> RklStatus {
    nonnull!(space, out);
    guard(|| match kernel_diag(&(*space).0, Complex64::new(x, y)) {
        Ok(k) => {
            *out = k.raw.re;
            RklStatus::Ok
        }
        Err(e) => core_status(&e),
    })
}

/// Off-diagonal kernel K(z, w) as real and imaginary parts.
///
/// # Safety
/// `space` must be a live handle; `re` and `im` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rkl_bergman_kernel(space: *const RklBergman, zx: f64, zy: f64, wx: f64, wy: f64, re: *mut f64, im: *mut f64) -> RklStatus {
    nonnull!(space, re, im);
    guard(|| match (*space).0.kernel(Complex64::new(zx, zy), Complex64::new(wx, wy)) {
        Ok(k) => {
            *re = k.re;
            *im = k.im;
            RklStatus::Ok
        }
        Err(e) => core_status(&e),
    })
}

/// Number of basis functions kept after orthonormalization.
///
/// # Safety
/// `space` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rkl_bergman_dim(space: *const RklBergman, out: *mut usize) -> RklStatus {
    nonnull!(space, out);
    *out = (*space).0.dim();
    RklStatus::Ok
}

/// # Safety
/// `space` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rkl_bergman_free(space: *mut RklBergman) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Parses `key = value` configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rkl_config_parse(config: *const c_char, out: *mut *mut RklConfig) -> RklStatus {
    nonnull!(out);
    let s = match text(config) {
        Ok(s) => s,
        Err(st) => return st,
    };
    guard(|| match parse_with_overrides(s, &[]) {
        Ok(c) => {
            *out = Box::into_raw(Box::new(RklConfig(c)));
            RklStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            RklStatus::InvalidArgument
        }
    })
}

/// Overrides one key; the configuration is revalidated.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn rkl_config_set(config: *mut RklConfig, key: *const c_char, value: *const c_char) -> RklStatus {
    nonnull!(config);
    let (k, v) = match (text(key), text(value)) {
        (Ok(k), Ok(v)) => (k, v),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    let cfg = &mut (*config).0;
    let mut next = cfg.clone();
    guard(|| match next.set(k, v, None).and_then(|_| next.validate()) {
        Ok(()) => {
            *cfg = next;
            RklStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            RklStatus::InvalidArgument
        }
    })
}

/// Runs the command and returns the JSON report. Nothing is written to disk.
/// Free the string with [`rkl_string_free`].
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rkl_execute_json(config: *const RklConfig, out: *mut *mut c_char) -> RklStatus {
    nonnull!(config, out);
    let cfg = &(*config).0;
    guard(|| match execute(cfg) {
        Ok(o) => {
            *out = CString::new(report_json(cfg, &o)).map(CString::into_raw).unwrap_or(ptr::null_mut());
            RklStatus::Ok
        }
        Err(CliError::Config(m)) => {
            set_error(m);
            RklStatus::InvalidArgument
        }
        Err(CliError::Numerical(m)) => {
            set_error(m);
            RklStatus::Numerical
        }
    })
}

/// Runs the command like the `rkl` binary, writing JSON and CSV outputs; stores its exit code.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rkl_run(config: *const RklConfig, exit_code: *mut i32) -> RklStatus {
    nonnull!(config, exit_code);
    guard(|| {
        *exit_code = run(&(*config).0);
        RklStatus::Ok
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rkl_config_free(config: *mut RklConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rkl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
