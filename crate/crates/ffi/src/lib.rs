//! C ABI for the forecasting core.
//!
//! The surface is deliberately small: load a trained checkpoint into an
//! opaque handle, query its window geometry, and run forecasts. Inputs and
//! outputs are in the original units of the training series; the handle
//! carries the normalization recorded in the checkpoint and applies it
//! internally.
//!
//! Conventions:
//! - Every fallible call returns an [`FcStatus`]; `FC_STATUS_OK` is zero.
//! - After a failure, [`fc_last_error`] returns a NUL-terminated,
//!   thread-local message describing it.
//! - Buffers are caller-allocated; the library never retains pointers passed
//!   in and never allocates memory the caller must free, except the model
//!   handle itself (release with [`fc_model_free`]).
//! - A loaded model is immutable; one handle may serve concurrent
//!   [`fc_forecast`] calls from multiple threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use flowcast::checkpoint::load_checkpoint;
use flowcast::dataflow::{calendar_features, CalendarFeatures, Norm};
use flowcast::model::{MaskMode, ModelState};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// The checkpoint could not be read or failed validation.
    Load = 3,
    /// A buffer length did not match the model's window geometry.
    Length = 4,
    /// A timestamp was outside the representable calendar range.
    Timestamp = 5,
    /// An input value was not finite, or the forecast diverged.
    Numeric = 6,
    /// An internal invariant failed; the handle is still valid.
    Internal = 7,
}

/// An opaque trained model handle.
pub struct FcModel {
    inner: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // Interior NULs cannot appear in a C string; replace them defensively.
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(clean).expect("NULs were replaced");
    });
}

fn fail(status: FcStatus, msg: &str) -> FcStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into `FcStatus::Internal` so unwinding never
/// crosses the C boundary.
fn guarded(f: impl FnOnce() -> FcStatus) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(FcStatus::Internal, &format!("internal error: {msg}"))
        }
    }
}

/// Returns the message for the most recent failure on the calling thread, as
/// a NUL-terminated string. The pointer stays valid until the next failing
/// call on the same thread. Before any failure it is the empty string.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a trained checkpoint file into a new model handle.
///
/// On success writes the handle to `*out_model` and returns `FC_STATUS_OK`.
/// On failure `*out_model` is untouched and the status tells the class of
/// problem; `fc_last_error` has the details.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out_model` to writable
/// storage for one pointer; both must stay valid for the duration of the
/// call.
#[no_mangle]
pub unsafe extern "C" fn fc_model_load(
    path: *const c_char,
    out_model: *mut *mut FcModel,
) -> FcStatus {
    guarded(|| {
        if path.is_null() || out_model.is_null() {
            return fail(FcStatus::NullArgument, "fc_model_load: NULL argument");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => return fail(FcStatus::Utf8, "fc_model_load: path is not valid UTF-8"),
        };
        match load_checkpoint(Path::new(path)) {
            Ok(state) => {
                *out_model = Box::into_raw(Box::new(FcModel { inner: state }));
                FcStatus::Ok
            }
            Err(e) => fail(FcStatus::Load, &e.to_string()),
        }
    })
}

/// Releases a handle returned by `fc_model_load`. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a pointer obtained from `fc_model_load` that has
/// not been freed already; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_model_free(model: *mut FcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of history steps one forecast consumes. Returns 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle from `fc_model_load`.
#[no_mangle]
pub unsafe extern "C" fn fc_input_len(model: *const FcModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).inner.dims.l
    }
}

/// Number of future steps one forecast produces. Returns 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle from `fc_model_load`.
#[no_mangle]
pub unsafe extern "C" fn fc_horizon(model: *const FcModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).inner.dims.horizon
    }
}

/// Forecasts the next `out_len` values from one history window.
///
/// `counts` holds `len` observed values in original units and `timestamps`
/// the matching per-step times as Unix seconds (interpreted as civil time,
/// the same convention as the training CSV). `len` must equal
/// `fc_input_len`, `out_len` must equal `fc_horizon`, and on success `out`
/// receives the forecast in original units.
///
/// # Safety
/// `model` must be a live handle; `counts` and `timestamps` must point to
/// `len` readable elements each; `out` must point to `out_len` writable
/// elements. Buffers must not overlap.
#[no_mangle]
pub unsafe extern "C" fn fc_forecast(
    model: *const FcModel,
    counts: *const f64,
    timestamps: *const i64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> FcStatus {
    guarded(|| {
        if model.is_null() || counts.is_null() || timestamps.is_null() || out.is_null() {
            return fail(FcStatus::NullArgument, "fc_forecast: NULL argument");
        }
        let state = &(*model).inner;
        if len != state.dims.l {
            return fail(
                FcStatus::Length,
                &format!("fc_forecast: model consumes {} history steps, got {len}", state.dims.l),
            );
        }
        if out_len != state.dims.horizon {
            return fail(
                FcStatus::Length,
                &format!(
                    "fc_forecast: model produces {} forecast steps, got buffer for {out_len}",
                    state.dims.horizon
                ),
            );
        }
        let counts = std::slice::from_raw_parts(counts, len);
        let timestamps = std::slice::from_raw_parts(timestamps, len);
        if let Some(i) = counts.iter().position(|v| !v.is_finite()) {
            return fail(
                FcStatus::Numeric,
                &format!("fc_forecast: count at index {i} is not finite"),
            );
        }
        let mut calendar = Vec::with_capacity(len);
        for (i, &ts) in timestamps.iter().enumerate() {
            match chrono::DateTime::from_timestamp(ts, 0) {
                Some(dt) => calendar.push(calendar_features(dt.naive_utc())),
                None => {
                    return fail(
                        FcStatus::Timestamp,
                        &format!("fc_forecast: timestamp at index {i} ({ts}) is out of range"),
                    )
                }
            }
        }
        let status = forecast_raw(state, counts, &calendar, |i, v| *out.add(i) = v);
        match status {
            Ok(()) => FcStatus::Ok,
            Err(msg) => fail(FcStatus::Numeric, &msg),
        }
    })
}

/// Shared forecast body: normalize with the stored transform, run the model,
/// map back to original units, and hand each value to `emit`.
fn forecast_raw(
    state: &ModelState,
    counts: &[f64],
    calendar: &[CalendarFeatures],
    mut emit: impl FnMut(usize, f64),
) -> Result<(), String> {
    let norm = state.data_norm.unwrap_or(Norm { mean: 0.0, std: 1.0 });
    let history: Vec<f64> = counts.iter().map(|&v| norm.apply(v)).collect();
    let output = state
        .forward(&history, calendar, MaskMode::Hard)
        .map_err(|e| e.to_string())?;
    for (i, &z) in output.pred.iter().enumerate() {
        emit(i, norm.invert(z));
    }
    Ok(())
}
