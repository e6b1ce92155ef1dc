// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! C ABI for the qmla engine.
//!
//! Objects are opaque handles created by `*_new`/`*_parse` functions and
//! released by the matching `*_free`. Every fallible call returns a
//! [`QmlaStatus`]; on failure [`qmla_last_error`] describes the cause for
//! the calling thread. Strings returned through out-parameters are owned by
//! the caller and must be released with [`qmla_string_free`].

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qmla::harness::{estimate_runtime, run_single, RunConfig, RuntimeInputs};
use qmla::pauli::CompiledModel;
use qmla::system::{outcome_probability, ExperimentDesign, ProbeState};
use qmla::{ModelExpression, ParamVector, QmlaError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Dimension = 5,
    Numeric = 6,
    Io = 7,
    /// Any other engine error, or a caught panic.
    Internal = 8,
}

/// A parsed model expression.
pub struct QmlaModel {
    model: ModelExpression,
}

/// A validated run configuration.
pub struct QmlaConfig {
    config: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &QmlaError) -> QmlaStatus {
    match err {
        QmlaError::Parse { .. } | QmlaError::DuplicateTerm(_) => QmlaStatus::Parse,
        QmlaError::Config(_) | QmlaError::Json(_) => QmlaStatus::Config,
        QmlaError::Dimension(_) | QmlaError::Alignment { .. } | QmlaError::Shape(_) => QmlaStatus::Dimension,
        QmlaError::NonFiniteParameter { .. }
        | QmlaError::Probability(_)
        | QmlaError::OutOfRange { .. }
        | QmlaError::Domain(_)
        | QmlaError::NotHermitian(_) => QmlaStatus::Numeric,
        QmlaError::Io { .. } | QmlaError::Csv(_) | QmlaError::Dataset(_) => QmlaStatus::Io,
        _ => QmlaStatus::Internal,
    }
}

struct Failure(QmlaStatus, String);

impl From<QmlaError> for Failure {
    fn from(err: QmlaError) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> QmlaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QmlaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {message}"));
            QmlaStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(QmlaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(QmlaStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn owned_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qmla_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qmla_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qmla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model name such as `"SxyzAz"`.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_parse(text: *const c_char, out: *mut *mut QmlaModel) -> QmlaStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        let model = ModelExpression::parse(text)?;
        write_out(out, Box::into_raw(Box::new(QmlaModel { model })), "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`qmla_model_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_free(model: *mut QmlaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_num_params(model: *const QmlaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_params())
}

/// Number of qubits, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_num_qubits(model: *const QmlaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_qubits())
}

/// Canonical name of the model, released with [`qmla_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_name(model: *const QmlaModel, out: *mut *mut c_char) -> QmlaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        write_out(out, owned_string(model.model.name()), "out")
    })
}

/// Probability that the probe returns after time `t`:
/// `|+⟩` for one-qubit models, `|+⟩ ⊗ (|0⟩ + e^{iφ}|1⟩)/√2` otherwise.
///
/// # Safety
/// `model` must be a live handle, `params` must point to `num_params`
/// doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_model_return_probability(
    model: *const QmlaModel,
    params: *const f64,
    num_params: usize,
    t: f64,
    phi: f64,
    out: *mut f64,
) -> QmlaStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if params.is_null() && num_params > 0 {
            return Err(null("params"));
        }
        let values = if num_params == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(params, num_params).to_vec()
        };
        let values = ParamVector::for_model(model, values)?;
        let qubits = model.num_qubits();
        let environment = (qubits > 1).then(|| ProbeState::plus_phase(phi));
        let design = ExperimentDesign::new(ProbeState::plus(), environment, t)?;
        let spectrum = CompiledModel::new(model, qubits)?.spectrum(&values);
        write_out(out, outcome_probability(&spectrum, qubits, &design)?, "out")
    })
}

/// Parses and validates a JSON run configuration.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_config_from_json(json: *const c_char, out: *mut *mut QmlaConfig) -> QmlaStatus {
    guard(|| {
        let config = RunConfig::from_json(read_str(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(QmlaConfig { config })), "out")
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from [`qmla_config_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qmla_config_free(config: *mut QmlaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Expected seconds for one instance given `t_h` seconds per
/// exponentiation.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_estimate_runtime(config: *const QmlaConfig, t_h: f64, out: *mut f64) -> QmlaStatus {
    guard(|| {
        let c = &config.as_ref().ok_or_else(|| null("config"))?.config;
        if !(t_h >= 0.0) {
            return Err(Failure(
                QmlaStatus::Numeric,
                format!("t_h must be non-negative, got {t_h}"),
            ));
        }
        let inputs = RuntimeInputs::for_rule(&c.growth, c.num_particles, c.num_epochs, c.parallelism);
        write_out(out, estimate_runtime(&inputs, t_h), "out")
    })
}

/// Runs one search instance with `seed` and returns its result as JSON,
/// released with [`qmla_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_run_instance_json(
    config: *const QmlaConfig,
    seed: u64,
    out: *mut *mut c_char,
) -> QmlaStatus {
    guard(|| {
        let c = &config.as_ref().ok_or_else(|| null("config"))?.config;
        if out.is_null() {
            return Err(null("out"));
        }
        let result = run_single(c, seed)?;
        let json = serde_json::to_string(&result).map_err(QmlaError::from)?;
        write_out(out, owned_string(json), "out")
    })
}

/// Minimum particle count from the Bayes-factor stability bound.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmla_min_particle_bound(
    kappa: f64,
    b: f64,
    k: f64,
    d: u32,
    l: f64,
    gamma: f64,
    out: *mut u64,
) -> QmlaStatus {
    guard(|| {
        let n = qmla::bayes::min_particle_bound(kappa, b, k, d, l, gamma)?;
        write_out(out, n, "out")
    })
}
