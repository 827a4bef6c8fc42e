//! C ABI for the thermoscan toolkit.
//!
//! Conventions:
//! - Every fallible function returns a `TsStatus` code; `TS_OK` (0) means
//!   success.
//! - On failure, `ts_last_error()` returns a UTF-8 message valid until the
//!   next failing call on the same thread.
//! - Handles (`TsDataset`, `TsModel`, `TsMetrics`) are opaque; free them
//!   with their matching `_free` function exactly once. `_free` accepts
//!   null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use thermoscan_core::dataset::{load_csv, train_test_split};
use thermoscan_core::evaluation::{roc_auc, threshold_sweep, MetricKind};
use thermoscan_core::learners::{LearnerFamily, Params};
use thermoscan_core::{Model, TabularDataset};

/// Status codes returned by every fallible binding.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    TsOk = 0,
    TsNullPointer = 1,
    TsInvalidUtf8 = 2,
    TsError = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) -> TsStatus {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    TsStatus::TsError
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque tabular dataset handle.
pub struct TsDataset {
    inner: TabularDataset,
}

/// Opaque trained-model handle.
pub struct TsModel {
    inner: Model,
}

/// Opaque evaluation-result handle.
pub struct TsMetrics {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    roc_auc: f64,
    threshold: f64,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, TsStatus> {
    if ptr.is_null() {
        return Err(TsStatus::TsNullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| TsStatus::TsInvalidUtf8)
}

/// Load a CSV with a header row; `label_column` names the class column.
///
/// # Safety
/// `path` and `label_column` must be NUL-terminated strings; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    out: *mut *mut TsDataset,
) -> TsStatus {
    if out.is_null() {
        return TsStatus::TsNullPointer;
    }
    let (path, label) = match (cstr(path), cstr(label_column)) {
        (Ok(p), Ok(l)) => (p, l),
        (Err(e), _) | (_, Err(e)) => return e,
    };
    match load_csv(Path::new(path), label) {
        Ok(ds) => {
            *out = Box::into_raw(Box::new(TsDataset { inner: ds }));
            TsStatus::TsOk
        }
        Err(e) => set_error(&e.to_string()),
    }
}

/// Number of rows.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_rows(ds: *const TsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of feature columns.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_features(ds: *const TsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d())
}

/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_free(ds: *mut TsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train a learner family (for example "logistic", "gbt_x", "forest") on
/// the whole dataset with library-default parameters.
///
/// # Safety
/// `ds` must be a live dataset handle, `family` a NUL-terminated string,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_model_train(
    ds: *const TsDataset,
    family: *const c_char,
    seed: u64,
    out: *mut *mut TsModel,
) -> TsStatus {
    let Some(ds) = ds.as_ref() else {
        return TsStatus::TsNullPointer;
    };
    if out.is_null() {
        return TsStatus::TsNullPointer;
    }
    let family = match cstr(family) {
        Ok(f) => f,
        Err(e) => return e,
    };
    let trained = LearnerFamily::parse(family)
        .and_then(|f| f.train(&ds.inner, &Params::new(), seed));
    match trained {
        Ok(model) => {
            *out = Box::into_raw(Box::new(TsModel { inner: model }));
            TsStatus::TsOk
        }
        Err(e) => set_error(&e.to_string()),
    }
}

/// Score one feature row; writes a probability-like value in [0, 1].
///
/// # Safety
/// `features` must point to `len` doubles; `model` and `out_score` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ts_model_predict(
    model: *const TsModel,
    features: *const f64,
    len: usize,
    out_score: *mut f64,
) -> TsStatus {
    let Some(model) = model.as_ref() else {
        return TsStatus::TsNullPointer;
    };
    if features.is_null() || out_score.is_null() {
        return TsStatus::TsNullPointer;
    }
    let row = std::slice::from_raw_parts(features, len);
    match model.inner.predict_score(row) {
        Ok(score) => {
            *out_score = score;
            TsStatus::TsOk
        }
        Err(e) => set_error(&e.to_string()),
    }
}

/// Serialize the model to a JSON file.
///
/// # Safety
/// `model` must be live; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ts_model_save_json(
    model: *const TsModel,
    path: *const c_char,
) -> TsStatus {
    let Some(model) = model.as_ref() else {
        return TsStatus::TsNullPointer;
    };
    let path = match cstr(path) {
        Ok(p) => p,
        Err(e) => return e,
    };
    match model.inner.save_json(Path::new(path)) {
        Ok(()) => TsStatus::TsOk,
        Err(e) => set_error(&e.to_string()),
    }
}

/// Load a model serialized by `ts_model_save_json`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_model_load_json(
    path: *const c_char,
    out: *mut *mut TsModel,
) -> TsStatus {
    if out.is_null() {
        return TsStatus::TsNullPointer;
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(e) => return e,
    };
    match Model::load_json(Path::new(path)) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(TsModel { inner: model }));
            TsStatus::TsOk
        }
        Err(e) => set_error(&e.to_string()),
    }
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ts_model_free(model: *mut TsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Score the model on a stratified test fraction of `ds` with an
/// F1-selected threshold. The model is used as-is; no retraining happens.
///
/// # Safety
/// `model` and `ds` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_metrics_evaluate(
    model: *const TsModel,
    ds: *const TsDataset,
    test_fraction: f64,
    seed: u64,
    out: *mut *mut TsMetrics,
) -> TsStatus {
    let (Some(model), Some(ds)) = (model.as_ref(), ds.as_ref()) else {
        return TsStatus::TsNullPointer;
    };
    if out.is_null() {
        return TsStatus::TsNullPointer;
    }
    let result = (|| {
        let (_, test) = train_test_split(&ds.inner, test_fraction, seed, true)?;
        let scores = model.inner.predict_scores(&test)?;
        let sweep = threshold_sweep(&scores, &test.labels, MetricKind::F1)?;
        let auc = roc_auc(&scores, &test.labels).unwrap_or(f64::NAN);
        let m = &sweep.selected.metrics;
        Ok::<TsMetrics, thermoscan_core::Error>(TsMetrics {
            accuracy: m.accuracy.unwrap_or(f64::NAN),
            precision: m.precision.unwrap_or(f64::NAN),
            recall: m.sensitivity.unwrap_or(f64::NAN),
            f1: m.f1.unwrap_or(f64::NAN),
            roc_auc: auc,
            threshold: sweep.selected.threshold,
        })
    })();
    match result {
        Ok(metrics) => {
            *out = Box::into_raw(Box::new(metrics));
            TsStatus::TsOk
        }
        Err(e) => set_error(&e.to_string()),
    }
}

/// Fetch a metric by name: accuracy | precision | recall | f1 | roc_auc |
/// threshold. Undefined metrics read as NaN.
///
/// # Safety
/// `metrics` must be live; `name` NUL-terminated; `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn ts_metrics_get(
    metrics: *const TsMetrics,
    name: *const c_char,
    out_value: *mut f64,
) -> TsStatus {
    let Some(metrics) = metrics.as_ref() else {
        return TsStatus::TsNullPointer;
    };
    if out_value.is_null() {
        return TsStatus::TsNullPointer;
    }
    let name = match cstr(name) {
        Ok(n) => n,
        Err(e) => return e,
    };
    let value = match name {
        "accuracy" => metrics.accuracy,
        "precision" => metrics.precision,
        "recall" => metrics.recall,
        "f1" => metrics.f1,
        "roc_auc" => metrics.roc_auc,
        "threshold" => metrics.threshold,
        other => return set_error(&format!("unknown metric {other:?}")),
    };
    *out_value = value;
    TsStatus::TsOk
}

/// # Safety
/// `metrics` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ts_metrics_free(metrics: *mut TsMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
