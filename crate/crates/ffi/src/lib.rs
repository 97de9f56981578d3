//! C ABI for the panelq estimator.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns
//! a [`PanelqStatus`]; on failure [`panelq_last_error`] describes the cause.
//! Panics never unwind into C: they are caught and reported as
//! [`PanelqStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use panelq::covariance::CovarianceMode;
use panelq::md::{estimate_md, wald_test, EstimatorConfig, MDEstimate};
use panelq::panel::{load_panel, EstimateRecord, PanelDataset, PanelFormat};
use panelq::qr::{fit_qr, DesignMatrix};
use panelq::Error;

/// Status codes; 3 to 8 coincide with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Input = 3,
    Estimation = 4,
    Io = 5,
    Config = 6,
    Version = 7,
    Simulation = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelqMode {
    Iid = 0,
    Dependent = 1,
}

/// Estimator settings. Obtain defaults from [`panelq_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PanelqOptions {
    pub mode: PanelqMode,
    /// Bandwidth override; nonpositive or NaN selects the default.
    pub d_t: f64,
    /// Lag override; negative selects the default.
    pub m_t: i64,
    pub drop_failed: bool,
}

/// Opaque balanced panel.
pub struct PanelqPanel(PanelDataset);

/// Opaque pooled estimate.
pub struct PanelqEstimate(MDEstimate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> PanelqStatus {
    match e.exit_code() {
        3 => PanelqStatus::Input,
        4 => PanelqStatus::Estimation,
        5 => PanelqStatus::Io,
        7 => PanelqStatus::Version,
        8 => PanelqStatus::Simulation,
        _ => PanelqStatus::Config,
    }
}

fn fail(e: Error) -> PanelqStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn invalid(msg: &str) -> PanelqStatus {
    set_error(msg);
    PanelqStatus::InvalidArgument
}

fn null(name: &str) -> PanelqStatus {
    set_error(&format!("`{name}` is null"));
    PanelqStatus::NullPointer
}

fn guard<F: FnOnce() -> PanelqStatus>(f: F) -> PanelqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            PanelqStatus::Panic
        }
    }
}

/// Copies `src` into the caller buffer `out` of length `len`.
unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> PanelqStatus {
    if out.is_null() {
        return null("out");
    }
    if len < src.len() {
        return invalid(&format!(
            "buffer holds {len} values, {} required",
            src.len()
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    PanelqStatus::Ok
}

/// Message of the last failure on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn panelq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn panelq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn panelq_options_default() -> PanelqOptions {
    PanelqOptions {
        mode: PanelqMode::Iid,
        d_t: f64::NAN,
        m_t: -1,
        drop_failed: false,
    }
}

/// Builds a panel from row-major arrays: `y[i*t + s]` and
/// `x[(i*t + s)*p + j]`. Individuals are labelled `1..n`.
///
/// # Safety
/// `y` must point to `n*t` values, `x` to `n*t*p` values and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn panelq_panel_new(
    n: usize,
    t: usize,
    p: usize,
    y: *const f64,
    x: *const f64,
    out: *mut *mut PanelqPanel,
) -> PanelqStatus {
    guard(|| {
        if y.is_null() {
            return null("y");
        }
        if x.is_null() {
            return null("x");
        }
        if out.is_null() {
            return null("out");
        }
        let Some(rows) = n.checked_mul(t) else {
            return invalid("n*t overflows");
        };
        let Some(cells) = rows.checked_mul(p) else {
            return invalid("n*t*p overflows");
        };
        let y = std::slice::from_raw_parts(y, rows).to_vec();
        let x = std::slice::from_raw_parts(x, cells).to_vec();
        let ids = (1..=n).map(|i| i.to_string()).collect();
        match PanelDataset::new(ids, t, p, y, x) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(PanelqPanel(panel)));
                PanelqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a long-format CSV panel (`id,time,y,x1,...,xp`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn panelq_panel_load_csv(
    path: *const c_char,
    out: *mut *mut PanelqPanel,
) -> PanelqStatus {
    guard(|| {
        if path.is_null() {
            return null("path");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return invalid("path is not valid UTF-8");
        };
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) => {
                return fail(Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{path}: {e}"),
                )))
            }
        };
        match load_panel(std::io::BufReader::new(file), PanelFormat::CsvLong) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(PanelqPanel(panel)));
                PanelqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the panel dimensions; any output pointer may be null.
///
/// # Safety
/// `panel` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn panelq_panel_dims(
    panel: *const PanelqPanel,
    n: *mut usize,
    t: *mut usize,
    p: *mut usize,
) -> PanelqStatus {
    guard(|| {
        let Some(panel) = panel.as_ref() else {
            return null("panel");
        };
        for (dst, v) in [(n, panel.0.n()), (t, panel.0.t()), (p, panel.0.p())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        PanelqStatus::Ok
    })
}

/// # Safety
/// `panel` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn panelq_panel_free(panel: *mut PanelqPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Fits the pooled estimator at `tau`. `options` may be null for defaults.
///
/// # Safety
/// `panel` must be a live handle, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate(
    panel: *const PanelqPanel,
    tau: f64,
    options: *const PanelqOptions,
    out: *mut *mut PanelqEstimate,
) -> PanelqStatus {
    guard(|| {
        let Some(panel) = panel.as_ref() else {
            return null("panel");
        };
        if out.is_null() {
            return null("out");
        }
        let opts = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| panelq_options_default());
        let cfg = EstimatorConfig {
            mode: match opts.mode {
                PanelqMode::Iid => CovarianceMode::Iid,
                PanelqMode::Dependent => CovarianceMode::Dependent,
            },
            d_t: (opts.d_t > 0.0).then_some(opts.d_t),
            m_t: usize::try_from(opts.m_t).ok(),
            drop_failed: opts.drop_failed,
            ..EstimatorConfig::default()
        };
        match estimate_md(&panel.0, tau, &cfg) {
            Ok(est) => {
                *out = Box::into_raw(Box::new(PanelqEstimate(est)));
                PanelqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `est` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_free(est: *mut PanelqEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of slope coefficients, 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_p(est: *const PanelqEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.0.p())
}

/// Copies `β̂` into `out[0..p]`.
///
/// # Safety
/// `est` must be a live handle and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_beta(
    est: *const PanelqEstimate,
    out: *mut f64,
    len: usize,
) -> PanelqStatus {
    guard(|| match est.as_ref() {
        Some(e) => copy_out(e.0.beta_md.as_slice(), out, len),
        None => null("est"),
    })
}

/// Copies the standard errors into `out[0..p]`.
///
/// # Safety
/// `est` must be a live handle and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_std_errors(
    est: *const PanelqEstimate,
    out: *mut f64,
    len: usize,
) -> PanelqStatus {
    guard(|| match est.as_ref() {
        Some(e) => copy_out(&e.0.std_errors, out, len),
        None => null("est"),
    })
}

/// Copies `Σ̂` row-major into `out[0..p*p]`.
///
/// # Safety
/// `est` must be a live handle and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_sigma(
    est: *const PanelqEstimate,
    out: *mut f64,
    len: usize,
) -> PanelqStatus {
    guard(|| match est.as_ref() {
        Some(e) => {
            let rows: Vec<f64> = e.0.sigma_hat.transpose().as_slice().to_vec();
            copy_out(&rows, out, len)
        }
        None => null("est"),
    })
}

/// Wald test of `β = 0`.
///
/// # Safety
/// `est` must be a live handle; `statistic` and `p_value` writable.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_wald(
    est: *const PanelqEstimate,
    statistic: *mut f64,
    p_value: *mut f64,
) -> PanelqStatus {
    guard(|| {
        let Some(e) = est.as_ref() else {
            return null("est");
        };
        if statistic.is_null() || p_value.is_null() {
            return null("statistic/p_value");
        }
        let p = e.0.p();
        match wald_test(&e.0, &DMatrix::identity(p, p), &DVector::zeros(p)) {
            Ok(w) => {
                *statistic = w.statistic;
                *p_value = w.p_value;
                PanelqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Serialises the estimate record as JSON. Release the string with
/// [`panelq_string_free`].
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn panelq_estimate_to_json(
    est: *const PanelqEstimate,
    out: *mut *mut c_char,
) -> PanelqStatus {
    guard(|| {
        let Some(e) = est.as_ref() else {
            return null("est");
        };
        if out.is_null() {
            return null("out");
        }
        let text = match serde_json::to_string(&EstimateRecord::from_estimate(&e.0)) {
            Ok(t) => t,
            Err(err) => return fail(Error::Serde(err)),
        };
        match CString::new(text) {
            Ok(c) => {
                *out = c.into_raw();
                PanelqStatus::Ok
            }
            Err(_) => invalid("record contains a NUL byte"),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn panelq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Single quantile regression of `y` on `(1, x)`; `x` is row-major `t × p`.
/// Writes `(α̂, β̂)` to `gamma[0..=p]` and the mean check loss to
/// `objective` (may be null).
///
/// # Safety
/// `x` must hold `t*p` values, `y` `t` values and `gamma` `gamma_len`.
#[no_mangle]
pub unsafe extern "C" fn panelq_fit_qr(
    t: usize,
    p: usize,
    x: *const f64,
    y: *const f64,
    tau: f64,
    gamma: *mut f64,
    gamma_len: usize,
    objective: *mut f64,
) -> PanelqStatus {
    guard(|| {
        if y.is_null() {
            return null("y");
        }
        if x.is_null() && p > 0 {
            return null("x");
        }
        let Some(cells) = t.checked_mul(p) else {
            return invalid("t*p overflows");
        };
        let xs: &[f64] = if p == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(x, cells)
        };
        let ys = std::slice::from_raw_parts(y, t);
        let fit = DesignMatrix::with_intercept(t, p, xs).and_then(|d| fit_qr(&d, ys, tau));
        match fit {
            Ok(fit) => {
                let status = copy_out(&fit.gamma, gamma, gamma_len);
                if status == PanelqStatus::Ok && !objective.is_null() {
                    *objective = fit.objective;
                }
                status
            }
            Err(e) => fail(e),
        }
    })
}
