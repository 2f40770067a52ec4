//! C ABI for the margrisk library: opaque handles, integer status codes,
//! and caller-allocated output buffers. The header `include/margrisk.h` is
//! generated by cbindgen at build time.
//!
//! Conventions:
//! - Functions return `MARGRISK_OK` (0) on success; on failure they return a
//!   status code and leave a message readable via [`margrisk_last_error`].
//! - Handles are created by `_new`/`_load` functions and must be released
//!   with the matching `_free`; passing null to `_free` is always safe.
//! - Output arrays are caller-allocated; `_len` accessors give the sizes.

use libc::{c_char, c_double, c_int};
use margrisk::data::{load_csv_with, CsvSchema, Dataset};
use margrisk::error::Error;
use margrisk::estimator::{fit_with, FitOptions, FitResult};
use margrisk::gof::gof_test;
use margrisk::inference::{BandOptions, BandResult, BandWeight, CifInference, Influence};
use margrisk::missingness::{DesignSpec, TimeTransform};
use std::cell::RefCell;
use std::ffi::{CStr, CString};

/// Success.
pub const MARGRISK_OK: c_int = 0;
/// Invalid argument (null pointer, bad length, bad enum value).
pub const MARGRISK_ERR_ARG: c_int = 1;
/// Input data problem (file, parse, invariant violation).
pub const MARGRISK_ERR_DATA: c_int = 2;
/// Numerical failure (no convergence, singular system).
pub const MARGRISK_ERR_NUMERIC: c_int = 3;

/// Identity time transform in the missingness design.
pub const MARGRISK_DESIGN_TIME: c_int = 0;
/// Logarithmic time transform.
pub const MARGRISK_DESIGN_LOGTIME: c_int = 1;

/// Equal-precision band weight.
pub const MARGRISK_BAND_EP: c_int = 0;
/// Hall-Wellner band weight.
pub const MARGRISK_BAND_HW: c_int = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn code_for(err: &Error) -> c_int {
    if err.is_data_error() {
        MARGRISK_ERR_DATA
    } else {
        MARGRISK_ERR_NUMERIC
    }
}

/// Copy the last error message into `buf` (NUL terminated, truncated to
/// `cap` bytes); returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn margrisk_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Opaque dataset handle.
pub struct MargriskDataset {
    inner: Dataset,
}

/// Opaque fitted-model handle bundling the fit and its influence workspace.
pub struct MargriskFit {
    fit: FitResult,
    influence: Influence,
}

/// Opaque cumulative-incidence inference at a fixed covariate value.
pub struct MargriskCif {
    inner: CifInference,
    level: f64,
}

/// Opaque simultaneous confidence band.
pub struct MargriskBand {
    inner: BandResult,
}

fn design_spec(design: c_int, include_aux: c_int) -> Option<DesignSpec> {
    let time_transform = match design {
        MARGRISK_DESIGN_TIME => TimeTransform::Identity,
        MARGRISK_DESIGN_LOGTIME => TimeTransform::Log,
        _ => return None,
    };
    Some(DesignSpec {
        time_transform,
        include_z: true,
        include_a: include_aux != 0,
    })
}

/// Load a dataset from CSV. `causes` of 0 infers the cause count from the
/// data. On success writes a handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_load_csv(
    path: *const c_char,
    causes: c_int,
    out: *mut *mut MargriskDataset,
) -> c_int {
    if path.is_null() || out.is_null() || causes < 0 {
        set_error("null pointer or negative cause count");
        return MARGRISK_ERR_ARG;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return MARGRISK_ERR_ARG;
    };
    let k = if causes == 0 {
        None
    } else {
        Some(causes as usize)
    };
    match load_csv_with(path, &CsvSchema::default(), k, None) {
        Ok(data) => {
            *out = Box::into_raw(Box::new(MargriskDataset { inner: data }));
            MARGRISK_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_for(&e)
        }
    }
}

/// # Safety
/// `handle` must come from `margrisk_dataset_load_csv` or be null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_free(handle: *mut MargriskDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of clusters, or -1 for a null handle.
///
/// # Safety
/// `handle` must be a valid dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_n_clusters(handle: *const MargriskDataset) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.n_clusters() as c_int
}

/// Number of subjects, or -1 for a null handle.
///
/// # Safety
/// `handle` must be a valid dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_n_subjects(handle: *const MargriskDataset) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.n_subjects() as c_int
}

/// Number of competing causes, or -1 for a null handle.
///
/// # Safety
/// `handle` must be a valid dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_n_causes(handle: *const MargriskDataset) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.n_causes() as c_int
}

/// Number of covariates of interest, or -1 for a null handle.
///
/// # Safety
/// `handle` must be a valid dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_dataset_n_covariates(handle: *const MargriskDataset) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.n_covariates() as c_int
}

/// Fit the two-stage model. `design` selects the missingness-design time
/// transform; `include_aux` includes the auxiliary covariates when nonzero.
///
/// # Safety
/// `data` must be a valid dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_new(
    data: *const MargriskDataset,
    design: c_int,
    include_aux: c_int,
    out: *mut *mut MargriskFit,
) -> c_int {
    if data.is_null() || out.is_null() {
        set_error("null pointer");
        return MARGRISK_ERR_ARG;
    }
    let Some(spec) = design_spec(design, include_aux) else {
        set_error("unknown design code");
        return MARGRISK_ERR_ARG;
    };
    let dataset = &(*data).inner;
    let fit = match fit_with(dataset, &spec, &FitOptions::default()) {
        Ok(f) => f,
        Err(e) => {
            set_error(&e.to_string());
            return code_for(&e);
        }
    };
    let influence = match Influence::new(dataset, &fit) {
        Ok(i) => i,
        Err(e) => {
            set_error(&e.to_string());
            return code_for(&e);
        }
    };
    *out = Box::into_raw(Box::new(MargriskFit { fit, influence }));
    MARGRISK_OK
}

/// # Safety
/// `handle` must come from `margrisk_fit_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_free(handle: *mut MargriskFit) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn copy_out(src: &[f64], dst: *mut c_double, len: usize) -> c_int {
    if dst.is_null() || len != src.len() {
        set_error(&format!("output buffer must hold {} values", src.len()));
        return MARGRISK_ERR_ARG;
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    MARGRISK_OK
}

fn check_cause(fit: &FitResult, cause: c_int) -> Option<usize> {
    if cause >= 1 && (cause as usize) <= fit.k {
        Some(cause as usize)
    } else {
        None
    }
}

/// Coefficient estimates for one cause; `len` must equal the covariate
/// count.
///
/// # Safety
/// `handle` must be a valid fit handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_beta(
    handle: *const MargriskFit,
    cause: c_int,
    out: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    let f = &*handle;
    let Some(l) = check_cause(&f.fit, cause) else {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    };
    copy_out(&f.fit.cause(l).beta, out, len)
}

/// Sandwich standard errors for one cause's coefficients.
///
/// # Safety
/// As [`margrisk_fit_beta`].
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_beta_se(
    handle: *const MargriskFit,
    cause: c_int,
    out: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    let f = &*handle;
    let Some(l) = check_cause(&f.fit, cause) else {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    };
    copy_out(&f.influence.beta_se(l), out, len)
}

/// Stage-one coefficient vector length, or -1 for a null handle.
///
/// # Safety
/// `handle` must be a valid fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_gamma_len(handle: *const MargriskFit) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).fit.missingness.dim() as c_int
}

/// Stage-one (missingness model) coefficients.
///
/// # Safety
/// As [`margrisk_fit_beta`].
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_gamma(
    handle: *const MargriskFit,
    out: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    copy_out((*handle).fit.missingness.gamma(), out, len)
}

/// Number of jump times in a cause's baseline cumulative hazard, or -1.
///
/// # Safety
/// `handle` must be a valid fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_hazard_len(
    handle: *const MargriskFit,
    cause: c_int,
) -> c_int {
    if handle.is_null() {
        return -1;
    }
    let f = &*handle;
    match check_cause(&f.fit, cause) {
        Some(l) => f.fit.cause(l).cum_hazard.len() as c_int,
        None => -1,
    }
}

/// Baseline cumulative hazard curve with pointwise standard errors. Each
/// output array must hold `margrisk_fit_hazard_len` doubles.
///
/// # Safety
/// `handle` must be a valid fit handle; output arrays must hold `len`
/// doubles each.
#[no_mangle]
pub unsafe extern "C" fn margrisk_fit_hazard(
    handle: *const MargriskFit,
    cause: c_int,
    times: *mut c_double,
    values: *mut c_double,
    se: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    let f = &*handle;
    let Some(l) = check_cause(&f.fit, cause) else {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    };
    let hazard = &f.fit.cause(l).cum_hazard;
    let rc = copy_out(hazard.times(), times, len);
    if rc != MARGRISK_OK {
        return rc;
    }
    let rc = copy_out(hazard.values(), values, len);
    if rc != MARGRISK_OK {
        return rc;
    }
    let ses: Vec<f64> = hazard
        .times()
        .iter()
        .map(|&t| f.influence.lambda_se(l, t))
        .collect();
    copy_out(&ses, se, len)
}

/// Build cumulative-incidence inference at covariate value `z0`.
///
/// # Safety
/// `fit` must be a valid fit handle, `z0` must hold `z0_len` doubles, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn margrisk_cif_new(
    fit: *const MargriskFit,
    z0: *const c_double,
    z0_len: usize,
    level: c_double,
    out: *mut *mut MargriskCif,
) -> c_int {
    if fit.is_null() || z0.is_null() || out.is_null() {
        set_error("null pointer");
        return MARGRISK_ERR_ARG;
    }
    if !(level > 0.0 && level < 1.0) {
        set_error("level must lie in (0,1)");
        return MARGRISK_ERR_ARG;
    }
    let f = &*fit;
    let z0 = std::slice::from_raw_parts(z0, z0_len);
    match f.influence.cif_inference(z0) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MargriskCif { inner, level }));
            MARGRISK_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_for(&e)
        }
    }
}

/// # Safety
/// `handle` must come from `margrisk_cif_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_cif_free(handle: *mut MargriskCif) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of grid points of the incidence curves, or -1.
///
/// # Safety
/// `handle` must be a valid incidence handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_cif_len(handle: *const MargriskCif) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.grid().len() as c_int
}

/// Cumulative incidence curve for one cause with pointwise standard errors
/// and transformed confidence limits. Null output arrays are skipped.
///
/// # Safety
/// `handle` must be a valid incidence handle; non-null output arrays must
/// each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn margrisk_cif_curve(
    handle: *const MargriskCif,
    cause: c_int,
    times: *mut c_double,
    values: *mut c_double,
    se: *mut c_double,
    lower: *mut c_double,
    upper: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    let c = &*handle;
    if cause < 1 {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    }
    let table = c.inner.table(cause as usize, c.level);
    if len != table.len() {
        set_error(&format!("output buffer must hold {} values", table.len()));
        return MARGRISK_ERR_ARG;
    }
    for (i, (t, est, s, ci)) in table.into_iter().enumerate() {
        if !times.is_null() {
            *times.add(i) = t;
        }
        if !values.is_null() {
            *values.add(i) = est;
        }
        if !se.is_null() {
            *se.add(i) = s;
        }
        if !lower.is_null() {
            *lower.add(i) = ci.lower;
        }
        if !upper.is_null() {
            *upper.add(i) = ci.upper;
        }
    }
    MARGRISK_OK
}

/// Simultaneous band for one cause's cumulative incidence over the default
/// central window of event times.
///
/// # Safety
/// `handle` must be a valid incidence handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn margrisk_cif_band_new(
    handle: *const MargriskCif,
    cause: c_int,
    weight: c_int,
    level: c_double,
    nsim: usize,
    seed: u64,
    out: *mut *mut MargriskBand,
) -> c_int {
    if handle.is_null() || out.is_null() {
        set_error("null pointer");
        return MARGRISK_ERR_ARG;
    }
    let weight = match weight {
        MARGRISK_BAND_EP => BandWeight::EqualPrecision,
        MARGRISK_BAND_HW => BandWeight::HallWellner,
        _ => {
            set_error("unknown band weight code");
            return MARGRISK_ERR_ARG;
        }
    };
    if cause < 1 {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    }
    let opts = BandOptions {
        weight,
        level,
        nsim,
        t1: None,
        t2: None,
        seed,
    };
    match (*handle).inner.band(cause as usize, &opts) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MargriskBand { inner }));
            MARGRISK_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_for(&e)
        }
    }
}

/// # Safety
/// `handle` must come from a band constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_band_free(handle: *mut MargriskBand) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of grid points inside the band window, or -1.
///
/// # Safety
/// `handle` must be a valid band handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_band_len(handle: *const MargriskBand) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).inner.times.len() as c_int
}

/// Estimated critical value of the band's supremum statistic (NaN for a
/// null handle).
///
/// # Safety
/// `handle` must be a valid band handle or null.
#[no_mangle]
pub unsafe extern "C" fn margrisk_band_c_alpha(handle: *const MargriskBand) -> c_double {
    if handle.is_null() {
        return f64::NAN;
    }
    (*handle).inner.c_alpha
}

/// Copy the band's grid, estimate, and limits. Null arrays are skipped.
///
/// # Safety
/// Non-null output arrays must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn margrisk_band_curve(
    handle: *const MargriskBand,
    times: *mut c_double,
    estimate: *mut c_double,
    lower: *mut c_double,
    upper: *mut c_double,
    len: usize,
) -> c_int {
    if handle.is_null() {
        set_error("null handle");
        return MARGRISK_ERR_ARG;
    }
    let b = &(*handle).inner;
    if len != b.times.len() {
        set_error(&format!("output buffer must hold {} values", b.times.len()));
        return MARGRISK_ERR_ARG;
    }
    if !times.is_null() {
        std::ptr::copy_nonoverlapping(b.times.as_ptr(), times, len);
    }
    if !estimate.is_null() {
        std::ptr::copy_nonoverlapping(b.estimate.as_ptr(), estimate, len);
    }
    if !lower.is_null() {
        std::ptr::copy_nonoverlapping(b.lower.as_ptr(), lower, len);
    }
    if !upper.is_null() {
        std::ptr::copy_nonoverlapping(b.upper.as_ptr(), upper, len);
    }
    MARGRISK_OK
}

/// Goodness-of-fit p-value for the missingness model of `cause`.
///
/// # Safety
/// `data` must be a valid dataset handle and `p_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn margrisk_gof_pvalue(
    data: *const MargriskDataset,
    design: c_int,
    include_aux: c_int,
    cause: c_int,
    nsim: usize,
    seed: u64,
    p_value: *mut c_double,
) -> c_int {
    if data.is_null() || p_value.is_null() {
        set_error("null pointer");
        return MARGRISK_ERR_ARG;
    }
    let Some(spec) = design_spec(design, include_aux) else {
        set_error("unknown design code");
        return MARGRISK_ERR_ARG;
    };
    if cause < 1 {
        set_error("cause out of range");
        return MARGRISK_ERR_ARG;
    }
    let dataset = &(*data).inner;
    let result = margrisk::fit_missingness(dataset, &spec)
        .and_then(|m| gof_test(dataset, &m, cause as usize, nsim, seed));
    match result {
        Ok(r) => {
            *p_value = r.p_value;
            MARGRISK_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_for(&e)
        }
    }
}

/// ABI version for binding sanity checks.
#[no_mangle]
pub extern "C" fn margrisk_abi_version() -> c_int {
    1
}
