//! C ABI over the wrmdp solvers and metrics.
//!
//! Conventions: every function that can fail returns a `WrmdpStatus`; on
//! failure a thread-local message is set and can be read with
//! `wrmdp_last_error_message`. Models travel as opaque handles created from
//! the library's model JSON; output buffers are caller-allocated with sizes
//! taken from `wrmdp_model_n_states`. Handles are not thread-safe to mutate
//! but all operations here only read them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use wrmdp::mdp::FiniteMdp;
use wrmdp::metrics::{self, DiscreteMeasure};
use wrmdp::solve;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrmdpStatus {
    Ok = 0,
    NullPointer = 1,
    ParseError = 2,
    InvalidArgument = 3,
    SolveFailed = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn clear_error() {
    LAST_ERROR.with(|e| e.borrow_mut().clear());
}

/// Copies the last error message for the calling thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes (excluding the NUL), so callers can detect truncation.
/// Passing a null buffer or zero capacity just queries the length.
#[no_mangle]
pub extern "C" fn wrmdp_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Opaque MDP handle.
pub struct WrmdpModel {
    inner: FiniteMdp,
}

fn guard<F: FnOnce() -> WrmdpStatus>(f: F) -> WrmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic crossed the FFI boundary");
            WrmdpStatus::Panic
        }
    }
}

/// Parses a model from the library's JSON document
/// (`{"coords", "actions", "kernel", "cost"}`) and stores a handle in `out`.
/// The handle must be released with `wrmdp_model_free`.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_model_from_json(
    json: *const c_char,
    out: *mut *mut WrmdpModel,
) -> WrmdpStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            set_error("json and out must be non-null");
            return WrmdpStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(e) => {
                set_error(format!("model JSON is not valid UTF-8: {e}"));
                return WrmdpStatus::ParseError;
            }
        };
        match FiniteMdp::from_json(text) {
            Ok(inner) => {
                clear_error();
                unsafe { *out = Box::into_raw(Box::new(WrmdpModel { inner })) };
                WrmdpStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                WrmdpStatus::ParseError
            }
        }
    })
}

/// Releases a model handle. Passing null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_model_free(model: *mut WrmdpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of states, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_model_n_states(model: *const WrmdpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.n_states()
}

/// Number of actions, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_model_n_actions(model: *const WrmdpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.n_actions()
}

/// Solves the discounted problem. `out_values` and `out_policy` must hold
/// `wrmdp_model_n_states(model)` entries; either may be null to skip it.
/// `out_residual` receives the final fixed-point residual when non-null.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_solve_discounted(
    model: *const WrmdpModel,
    beta: f64,
    tol: f64,
    out_values: *mut f64,
    out_policy: *mut usize,
    out_residual: *mut f64,
) -> WrmdpStatus {
    guard(|| {
        if model.is_null() {
            set_error("model must be non-null");
            return WrmdpStatus::NullPointer;
        }
        let inner = &unsafe { &*model }.inner;
        match solve::solve_discounted(inner, beta, tol) {
            Ok(sol) => {
                let n = inner.n_states();
                unsafe {
                    if !out_values.is_null() {
                        std::ptr::copy_nonoverlapping(sol.value.as_ptr(), out_values, n);
                    }
                    if !out_policy.is_null() {
                        std::ptr::copy_nonoverlapping(sol.policy.0.as_ptr(), out_policy, n);
                    }
                    if !out_residual.is_null() {
                        *out_residual = sol.residual;
                    }
                }
                clear_error();
                WrmdpStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                WrmdpStatus::SolveFailed
            }
        }
    })
}

/// Solves the average-cost problem under the minorization certificate
/// `kernel >= epsilon * rho`. `rho` must hold one weight per state;
/// `out_h` and `out_policy` need `wrmdp_model_n_states(model)` entries and
/// may be null to skip. The optimal gain lands in `out_gain` when non-null.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_solve_average(
    model: *const WrmdpModel,
    epsilon: f64,
    rho: *const f64,
    tol: f64,
    out_gain: *mut f64,
    out_h: *mut f64,
    out_policy: *mut usize,
) -> WrmdpStatus {
    guard(|| {
        if model.is_null() || rho.is_null() {
            set_error("model and rho must be non-null");
            return WrmdpStatus::NullPointer;
        }
        let inner = &unsafe { &*model }.inner;
        let n = inner.n_states();
        let rho = unsafe { std::slice::from_raw_parts(rho, n) };
        match solve::solve_acoe_minorization(inner, epsilon, rho, tol) {
            Ok(trip) => {
                unsafe {
                    if !out_gain.is_null() {
                        *out_gain = trip.gain;
                    }
                    if !out_h.is_null() {
                        std::ptr::copy_nonoverlapping(trip.relative_value.as_ptr(), out_h, n);
                    }
                    if !out_policy.is_null() {
                        std::ptr::copy_nonoverlapping(trip.policy.0.as_ptr(), out_policy, n);
                    }
                }
                clear_error();
                WrmdpStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                WrmdpStatus::SolveFailed
            }
        }
    })
}

/// First Wasserstein distance between two weighted point sets on the line.
/// Weights must be nonnegative and sum to one within the library tolerance.
#[no_mangle]
pub unsafe extern "C" fn wrmdp_w1_1d(
    points_a: *const f64,
    weights_a: *const f64,
    len_a: usize,
    points_b: *const f64,
    weights_b: *const f64,
    len_b: usize,
    out: *mut f64,
) -> WrmdpStatus {
    guard(|| {
        if points_a.is_null()
            || weights_a.is_null()
            || points_b.is_null()
            || weights_b.is_null()
            || out.is_null()
        {
            set_error("all buffers must be non-null");
            return WrmdpStatus::NullPointer;
        }
        if len_a == 0 || len_b == 0 {
            set_error("measures need at least one support point");
            return WrmdpStatus::InvalidArgument;
        }
        let build = |pts: *const f64, ws: *const f64, len: usize| {
            let pts = unsafe { std::slice::from_raw_parts(pts, len) };
            let ws = unsafe { std::slice::from_raw_parts(ws, len) };
            DiscreteMeasure::from_points_1d(pts, ws)
        };
        let mu = match build(points_a, weights_a, len_a) {
            Ok(m) => m,
            Err(e) => {
                set_error(e.to_string());
                return WrmdpStatus::InvalidArgument;
            }
        };
        let nu = match build(points_b, weights_b, len_b) {
            Ok(m) => m,
            Err(e) => {
                set_error(e.to_string());
                return WrmdpStatus::InvalidArgument;
            }
        };
        match metrics::w1_1d(&mu, &nu) {
            Ok(d) => {
                unsafe { *out = d };
                clear_error();
                WrmdpStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                WrmdpStatus::InvalidArgument
            }
        }
    })
}
