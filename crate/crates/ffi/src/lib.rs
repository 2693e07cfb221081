//! C ABI over `hiermaml`: model and hierarchy handles, threshold selection
//! and R².
//!
//! Every fallible function returns an `HmStatus` code. On failure the
//! message is available from `hm_last_error` on the same thread until the
//! next failing call. Handles are opaque and must be released with their
//! `_free` function; passing NULL to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hiermaml::autodiff::{load_model, save_model, Architecture, PredictiveModel};
use hiermaml::hierarchy::{load_hierarchy, route, select_threshold, Category, GammaBounds, TaskHierarchy};
use hiermaml::metalearn::{evaluate_task, r_squared};
use hiermaml::tasks::{Location, SampleWindow, Task};
use hiermaml::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    Divergence = 4,
    IoError = 5,
    FormatError = 6,
    Panic = 7,
}

/// Opaque predictive model.
pub struct HmModel(PredictiveModel);

/// Opaque task hierarchy.
pub struct HmHierarchy(TaskHierarchy);

/// Routing decision for one task.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmRoute {
    /// Layer that decided the route, starting at 1.
    pub layer: usize,
    /// 1 when the task ended at the deepest hard model, 0 for an easy model.
    pub hard: i32,
    /// Routing R² at the deciding layer.
    pub routing_r2: f64,
    /// Query R² of the selected model after adaptation; −inf on divergence.
    pub r2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HmStatus {
    match e {
        Error::Dimension { .. } | Error::Argument(_) | Error::Contract(_) | Error::Config { .. } => {
            HmStatus::InvalidArgument
        }
        Error::Input(_) | Error::Ingestion { .. } | Error::AlreadyNormalized => HmStatus::DataError,
        Error::Divergence { .. } => HmStatus::Divergence,
        Error::Format { .. } => HmStatus::FormatError,
        Error::Io { .. } => HmStatus::IoError,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is NULL"));
            HmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            HmStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty when none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Freshly initialized model with the default head.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn hm_model_new(
    n_features: usize,
    seq_len: usize,
    hidden: usize,
    seed: u64,
    out: *mut *mut HmModel,
) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let arch = Architecture::with_default_head(n_features, seq_len, hidden)?;
        let model = PredictiveModel::init(arch, seed)?;
        *out = Box::into_raw(Box::new(HmModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_model_load(path_: *const c_char, out: *mut *mut HmModel) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = load_model(path(path_)?)?;
        *out = Box::into_raw(Box::new(HmModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `hm_model_new` or `hm_model_load`; `path` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_model_save(model: *const HmModel, path_: *const c_char) -> HmStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        save_model(&m.0, path(path_)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_model_free(model: *mut HmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_model_param_count(model: *const HmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Values per window (T·F); 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_model_window_len(model: *const HmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.architecture().window_len())
}

/// Predicts `n_windows` row-major T×F windows laid out back to back in
/// `windows`; writes `n_windows` values to `out`.
///
/// # Safety
/// `windows` must hold `n_windows · window_len` values and `out` room for
/// `n_windows`.
#[no_mangle]
pub unsafe extern "C" fn hm_model_predict(
    model: *const HmModel,
    windows: *const f64,
    n_windows: usize,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        let len = m.architecture().window_len();
        let data = slice(windows, n_windows * len, "windows")?;
        if n_windows > 0 && out.is_null() {
            return Err(Failure::Null("out"));
        }
        let refs: Vec<&[f64]> = data.chunks(len).collect();
        let preds = m.predict(&refs)?;
        if n_windows > 0 {
            ptr::copy_nonoverlapping(preds.as_ptr(), out, n_windows);
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_load(path_: *const c_char, out: *mut *mut HmHierarchy) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let h = load_hierarchy(path(path_)?)?;
        *out = Box::into_raw(Box::new(HmHierarchy(h)));
        Ok(())
    })
}

/// # Safety
/// `hierarchy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_free(hierarchy: *mut HmHierarchy) {
    if !hierarchy.is_null() {
        drop(Box::from_raw(hierarchy));
    }
}

/// Number of layers; 0 for NULL.
///
/// # Safety
/// `hierarchy` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_depth(hierarchy: *const HmHierarchy) -> usize {
    hierarchy.as_ref().map_or(0, |h| h.0.depth())
}

fn samples(windows: &[f64], labels: &[f64], len: usize, year: i32, first_id: u64) -> Vec<SampleWindow> {
    windows
        .chunks(len)
        .zip(labels)
        .enumerate()
        .map(|(i, (w, &label))| SampleWindow {
            features: w.to_vec(),
            label,
            year,
            sample_id: first_id + i as u64,
        })
        .collect()
}

/// Routes one task through the hierarchy, adapting with `alpha` for `steps`
/// SGD steps. Writes the decision to `out` and, when `predictions` is not
/// NULL, the selected model's adapted query predictions (`n_query` values).
///
/// # Safety
/// Window buffers must hold `n · window_len` values, label buffers `n`
/// values, `out` must be writable and `predictions` NULL or room for
/// `n_query` values.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_route(
    hierarchy: *const HmHierarchy,
    support_windows: *const f64,
    support_labels: *const f64,
    n_support: usize,
    query_windows: *const f64,
    query_labels: *const f64,
    n_query: usize,
    alpha: f64,
    steps: usize,
    out: *mut HmRoute,
    predictions: *mut f64,
) -> HmStatus {
    guard(|| {
        let h = &non_null(hierarchy, "hierarchy")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let len = h.initial_model.architecture().window_len();
        let task = Task {
            task_id: 0,
            location: Location { lat: 0.0, lon: 0.0 },
            support: samples(
                slice(support_windows, n_support * len, "support_windows")?,
                slice(support_labels, n_support, "support_labels")?,
                len,
                0,
                0,
            ),
            query: samples(
                slice(query_windows, n_query * len, "query_windows")?,
                slice(query_labels, n_query, "query_labels")?,
                len,
                1,
                n_support as u64,
            ),
            regime_id: None,
        };
        task.validate()?;
        let decision = route(&task, h, alpha, steps)?;
        let eval = evaluate_task(decision.model, &task, alpha, steps)?;
        *out = HmRoute {
            layer: decision.layer,
            hard: i32::from(decision.leaf == Category::Hard),
            routing_r2: decision.routing_r2,
            r2: eval.r2,
        };
        if !predictions.is_null() && !eval.diverged {
            ptr::copy_nonoverlapping(eval.predictions.as_ptr(), predictions, n_query);
        }
        Ok(())
    })
}

/// Variance-minimizing threshold over `values` with window bounds `a < b`.
/// Writes γ and the split index into the ascending order.
///
/// # Safety
/// `values` must hold `n` values; `gamma` and `split_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_select_threshold(
    values: *const f64,
    n: usize,
    a: f64,
    b: f64,
    gamma: *mut f64,
    split_index: *mut usize,
) -> HmStatus {
    guard(|| {
        if gamma.is_null() || split_index.is_null() {
            return Err(Failure::Null("output"));
        }
        let v = slice(values, n, "values")?;
        let split = select_threshold(v, GammaBounds::new(a, b)?)?;
        *gamma = split.gamma;
        *split_index = split.split_index;
        Ok(())
    })
}

/// Coefficient of determination of `predictions` against `labels`.
///
/// # Safety
/// Both buffers must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_r_squared(labels: *const f64, predictions: *const f64, n: usize, out: *mut f64) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = r_squared(slice(labels, n, "labels")?, slice(predictions, n, "predictions")?)?;
        Ok(())
    })
}
