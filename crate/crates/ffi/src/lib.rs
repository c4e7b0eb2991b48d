//! C interface to `tlm-core`.
//!
//! Models live behind an opaque `TlmModel` handle. Every fallible call
//! returns a status code (`TLM_OK` or a negative `TLM_ERR_*`); on failure
//! `tlm_last_error_message` describes the most recent error on the calling
//! thread. Strings returned by the library are freed with `tlm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tlm_core::cli::{train_on, RunConfig};
use tlm_core::data::Dataset;
use tlm_core::model::TlmModel as CoreModel;
use tlm_core::routing::{RoutingMode, SoftWeighting};
use tlm_core::TlmError;

pub const TLM_OK: i32 = 0;
pub const TLM_ERR_NULL: i32 = -1;
pub const TLM_ERR_INVALID_ARGUMENT: i32 = -2;
pub const TLM_ERR_IO: i32 = -3;
pub const TLM_ERR_PARSE: i32 = -4;
pub const TLM_ERR_DIMENSION: i32 = -5;
pub const TLM_ERR_NUMERIC: i32 = -6;
pub const TLM_ERR_PANIC: i32 = -7;

pub const TLM_ROUTING_HARD: i32 = 0;
pub const TLM_ROUTING_SOFT: i32 = 1;
pub const TLM_ROUTING_SOFT_FULL: i32 = 2;
pub const TLM_ROUTING_ORACLE: i32 = 3;

/// Opaque trained model.
pub struct TlmModel(CoreModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<TlmError> for Failure {
    fn from(err: TlmError) -> Self {
        let code = match &err {
            TlmError::Io { .. } => TLM_ERR_IO,
            TlmError::Csv(_)
            | TlmError::Parse { .. }
            | TlmError::NonFinite { .. }
            | TlmError::MissingColumn(_)
            | TlmError::Format(_) => TLM_ERR_PARSE,
            TlmError::DimensionMismatch { .. } | TlmError::LengthMismatch { .. } => TLM_ERR_DIMENSION,
            TlmError::Singular | TlmError::Divergence { .. } => TLM_ERR_NUMERIC,
            _ => TLM_ERR_INVALID_ARGUMENT,
        };
        Failure::new(code, err.to_string())
    }
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> i32 {
    let failure = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => return TLM_OK,
        Ok(Err(f)) => f,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Failure::new(TLM_ERR_PANIC, format!("internal panic: {what}"))
        }
    };
    set_last_error(failure.message);
    failure.code
}

fn null(what: &str) -> Failure {
    Failure::new(TLM_ERR_NULL, format!("{what} is null"))
}

unsafe fn model_ref<'a>(model: *const TlmModel) -> Result<&'a CoreModel, Failure> {
    // SAFETY: callers pass either null or a live handle from this library.
    unsafe { model.as_ref() }.map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn str_arg<'a>(text: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if text.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(text) }
        .to_str()
        .map_err(|_| Failure::new(TLM_ERR_INVALID_ARGUMENT, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and valid for `len` reads per the API contract.
    Ok(unsafe { std::slice::from_raw_parts(data, len) })
}

fn routing(mode: i32) -> Result<RoutingMode, Failure> {
    match mode {
        TLM_ROUTING_HARD => Ok(RoutingMode::Hard),
        TLM_ROUTING_SOFT => Ok(RoutingMode::Soft(SoftWeighting::Path)),
        TLM_ROUTING_SOFT_FULL => Ok(RoutingMode::Soft(SoftWeighting::Full)),
        TLM_ROUTING_ORACLE => Ok(RoutingMode::Oracle),
        other => Err(Failure::new(
            TLM_ERR_INVALID_ARGUMENT,
            format!("unknown routing mode {other}"),
        )),
    }
}

fn rows_len(rows: usize, dim: usize) -> Result<usize, Failure> {
    rows.checked_mul(dim)
        .ok_or_else(|| Failure::new(TLM_ERR_INVALID_ARGUMENT, "rows * dim overflows"))
}

unsafe fn emit_model(out: *mut *mut TlmModel, model: CoreModel) {
    // SAFETY: `out` was checked non-null by the caller.
    unsafe { *out = Box::into_raw(Box::new(TlmModel(model))) };
}

/// Message for the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_load(path: *const c_char, out: *mut *mut TlmModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { str_arg(path, "path") }?;
        let model = CoreModel::load(Path::new(path))?;
        unsafe { emit_model(out, model) };
        Ok(())
    })
}

/// Parses a model from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_from_json(json: *const c_char, out: *mut *mut TlmModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { str_arg(json, "json") }?;
        let model = CoreModel::from_json(text)?;
        unsafe { emit_model(out, model) };
        Ok(())
    })
}

/// Writes the model file.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_save(model: *const TlmModel, path: *const c_char) -> i32 {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        let path = unsafe { str_arg(path, "path") }?;
        model.save(Path::new(path))?;
        Ok(())
    })
}

/// Serializes the model; free the result with `tlm_string_free`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_to_json(model: *const TlmModel, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CString::new(model.to_json()).map_err(|e| Failure::new(TLM_ERR_PANIC, e.to_string()))?;
        unsafe { *out = text.into_raw() };
        Ok(())
    })
}

/// Feature dimension the model expects.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_dim(model: *const TlmModel, out: *mut usize) -> i32 {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = model.dim() };
        Ok(())
    })
}

/// Predicts one input of `len` features. `y_true` is read only for
/// `TLM_ROUTING_ORACLE`. `out_leaf` may be null.
///
/// # Safety
/// `features` must hold `len` doubles; `model` must be a live handle;
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_predict(
    model: *const TlmModel,
    features: *const f64,
    len: usize,
    mode: i32,
    y_true: f64,
    out_value: *mut f64,
    out_leaf: *mut u64,
) -> i32 {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        let f = unsafe { slice_arg(features, len, "features") }?;
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let mode = routing(mode)?;
        let truth = (mode == RoutingMode::Oracle).then_some(y_true);
        let (value, leaf) = model.predict(f, mode, truth)?;
        unsafe {
            *out_value = value;
            if !out_leaf.is_null() {
                *out_leaf = leaf;
            }
        }
        Ok(())
    })
}

/// Predicts `rows` row-major inputs of `dim` features into `out_values`
/// (and `out_leaves` when non-null). `targets` may be null except for
/// oracle routing.
///
/// # Safety
/// `features` must hold `rows * dim` doubles, `targets` (if non-null) and
/// the output buffers `rows` entries each.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_predict_batch(
    model: *const TlmModel,
    features: *const f64,
    rows: usize,
    dim: usize,
    mode: i32,
    targets: *const f64,
    out_values: *mut f64,
    out_leaves: *mut u64,
) -> i32 {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        if dim != model.dim() {
            return Err(TlmError::DimensionMismatch {
                expected: model.dim(),
                got: dim,
            }
            .into());
        }
        let f = unsafe { slice_arg(features, rows_len(rows, dim)?, "features") }?;
        let targets = if targets.is_null() {
            None
        } else {
            Some(unsafe { slice_arg(targets, rows, "targets") }?)
        };
        if out_values.is_null() && rows > 0 {
            return Err(null("out_values"));
        }
        let pred = model.predict_rows(f, targets, routing(mode)?)?;
        for (i, (value, leaf)) in pred.predictions.iter().zip(&pred.leaf_ids).enumerate() {
            unsafe {
                *out_values.add(i) = *value;
                if !out_leaves.is_null() {
                    *out_leaves.add(i) = *leaf;
                }
            }
        }
        Ok(())
    })
}

/// Trains a model on `rows` row-major inputs of `dim` features. `config_toml`
/// uses the run-configuration format (its `tree`, `train`, `feature_opt` and
/// `iterate` keys apply); null means defaults.
///
/// # Safety
/// `features` must hold `rows * dim` doubles and `targets` `rows`;
/// `config_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlm_train(
    features: *const f64,
    targets: *const f64,
    rows: usize,
    dim: usize,
    config_toml: *const c_char,
    out: *mut *mut TlmModel,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(unsafe { str_arg(config_toml, "config_toml") }?)?
        };
        let f = unsafe { slice_arg(features, rows_len(rows, dim)?, "features") }?;
        let y = unsafe { slice_arg(targets, rows, "targets") }?;
        let data = Dataset::new(f.to_vec(), y.to_vec(), dim)?;
        let trained = train_on(&data, None, &cfg)?;
        unsafe { emit_model(out, trained.model) };
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlm_model_free(model: *mut TlmModel) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `text` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlm_string_free(text: *mut c_char) {
    if !text.is_null() {
        // SAFETY: the string came from CString::into_raw in this library.
        drop(unsafe { CString::from_raw(text) });
    }
}
