//! C interface to the brunovsky crate.
//!
//! Every fallible function returns a `BrunovskyStatus`. On failure a message
//! is available from `brunovsky_last_error` on the calling thread until the
//! next failing call. Handles are opaque and must be released with the
//! matching `_free` function; passing NULL to a `_free` function is a no-op.
//! Arrays are passed as pointer plus length and are never retained.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use brunovsky::canonical::{AutoEncoder, Checkpoint};
use brunovsky::config::RunConfig;
use brunovsky::control::{plan_trajectory, pole_placement, ClosedLoopController, TrajectoryPlan};
use brunovsky::dynamics::DiscreteSystem;
use brunovsky::Error;
use nalgebra::Complex;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrunovskyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// Trained auto-encoder with its normalization.
pub struct BrunovskyAutoencoder(AutoEncoder);

/// Polynomial reference in Brunovsky coordinates.
pub struct BrunovskyPlan(TrajectoryPlan);

pub struct BrunovskyController(ClosedLoopController<AutoEncoder>);

/// Simulated plant built from a preset or config file.
pub struct BrunovskySystem(Box<dyn DiscreteSystem>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BrunovskyStatus {
    match e {
        Error::AtStep { source, .. } => status_of(source),
        Error::Dimension { .. } => BrunovskyStatus::Dimension,
        Error::InvalidParameter { .. } | Error::Config(_) | Error::SingularBoundary { .. } => {
            BrunovskyStatus::InvalidArgument
        }
        Error::SingularDenominator { .. }
        | Error::NonFinite { .. }
        | Error::Diverged { .. }
        | Error::DiscardRate { .. } => BrunovskyStatus::Numerical,
        Error::Io { .. } => BrunovskyStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => BrunovskyStatus::Parse,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BrunovskyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BrunovskyStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            BrunovskyStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_last_error(msg);
            BrunovskyStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            BrunovskyStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
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

unsafe fn write_out(p: *mut f64, values: &[f64], what: &'static str) -> Result<(), Failure> {
    if values.is_empty() {
        return Ok(());
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, values.len());
    Ok(())
}

unsafe fn write_scalar<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<(), Failure> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        }
        .into())
    }
}

unsafe fn publish<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

/// Message of the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn brunovsky_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn brunovsky_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the auto-encoder from a checkpoint file written by `train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_load(
    path: *const c_char,
    out: *mut *mut BrunovskyAutoencoder,
) -> BrunovskyStatus {
    guard(|| {
        let path = string(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        publish(out, BrunovskyAutoencoder(ck.ae))
    })
}

/// Parses a checkpoint from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_from_json(
    json: *const c_char,
    out: *mut *mut BrunovskyAutoencoder,
) -> BrunovskyStatus {
    guard(|| {
        let ck = Checkpoint::from_json(string(json, "json")?)?;
        publish(out, BrunovskyAutoencoder(ck.ae))
    })
}

/// # Safety
/// `ae` must be NULL or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_free(ae: *mut BrunovskyAutoencoder) {
    if !ae.is_null() {
        drop(Box::from_raw(ae));
    }
}

/// State dimension, or 0 for NULL.
///
/// # Safety
/// `ae` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_state_dim(ae: *const BrunovskyAutoencoder) -> usize {
    ae.as_ref().map_or(0, |a| a.0.n())
}

/// z = Φx(x) in physical units. `x` and `z_out` hold `n` values.
///
/// # Safety
/// Pointers must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_encode_state(
    ae: *const BrunovskyAutoencoder,
    x: *const f64,
    n: usize,
    z_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ae = &borrow(ae, "ae")?.0;
        check_len("state", ae.n(), n)?;
        let z = ae.encode_state(slice(x, n, "x")?)?;
        write_out(z_out, &z, "z_out")
    })
}

/// x = Φx⁻¹(z). `z` and `x_out` hold `n` values.
///
/// # Safety
/// Pointers must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_decode_state(
    ae: *const BrunovskyAutoencoder,
    z: *const f64,
    n: usize,
    x_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ae = &borrow(ae, "ae")?.0;
        check_len("state", ae.n(), n)?;
        let x = ae.decode_state(slice(z, n, "z")?)?;
        write_out(x_out, &x, "x_out")
    })
}

/// # Safety
/// `x` must be valid for `n` doubles and `v_out` for one.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_encode_input(
    ae: *const BrunovskyAutoencoder,
    x: *const f64,
    n: usize,
    u: f64,
    v_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ae = &borrow(ae, "ae")?.0;
        check_len("state", ae.n(), n)?;
        let v = ae.encode_input(slice(x, n, "x")?, u)?;
        write_scalar(v_out, v, "v_out")
    })
}

/// # Safety
/// `x` must be valid for `n` doubles and `u_out` for one.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_decode_input(
    ae: *const BrunovskyAutoencoder,
    x: *const f64,
    n: usize,
    v: f64,
    u_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ae = &borrow(ae, "ae")?.0;
        check_len("state", ae.n(), n)?;
        let u = ae.decode_input(slice(x, n, "x")?, v)?;
        write_scalar(u_out, u, "u_out")
    })
}

/// One-step model prediction Φx⁻¹(σ(Φx(x), Φu(x, u))).
///
/// # Safety
/// `x` and `x_out` must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_autoencoder_predict_step(
    ae: *const BrunovskyAutoencoder,
    x: *const f64,
    n: usize,
    u: f64,
    x_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ae = &borrow(ae, "ae")?.0;
        check_len("state", ae.n(), n)?;
        let next = ae.predict_step(slice(x, n, "x")?, u)?;
        write_out(x_out, &next, "x_out")
    })
}

/// Plans from `z0` to `z_n` (each `n` values) over `horizon` steps.
///
/// # Safety
/// `z0`, `z_n` must be valid for `n` doubles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_plan_create(
    z0: *const f64,
    z_n: *const f64,
    n: usize,
    horizon: usize,
    out: *mut *mut BrunovskyPlan,
) -> BrunovskyStatus {
    guard(|| {
        let plan = plan_trajectory(slice(z0, n, "z0")?, slice(z_n, n, "z_n")?, horizon)?;
        publish(out, BrunovskyPlan(plan))
    })
}

/// # Safety
/// `plan` must be NULL or a handle that is not used again.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_plan_free(plan: *mut BrunovskyPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_plan_state_dim(plan: *const BrunovskyPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.n())
}

/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_plan_horizon(plan: *const BrunovskyPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.horizon())
}

/// Reference at step `k`: `z_d_out` receives `n` values, `v_d_out` one.
/// Past the horizon the plan holds its final value.
///
/// # Safety
/// `z_d_out` must be valid for `n` doubles and `v_d_out` for one.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_plan_reference(
    plan: *const BrunovskyPlan,
    k: usize,
    z_d_out: *mut f64,
    n: usize,
    v_d_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let plan = &borrow(plan, "plan")?.0;
        check_len("plan reference", plan.n(), n)?;
        let (z_d, v_d) = plan.reference(k);
        write_out(z_d_out, &z_d, "z_d_out")?;
        write_scalar(v_d_out, v_d, "v_d_out")
    })
}

/// Builds a tracking controller. Poles are given as parallel real and
/// imaginary arrays of length `n`; `poles_im` may be NULL for real poles.
/// The auto-encoder and plan are copied, so their handles may be freed
/// afterwards.
///
/// # Safety
/// Handles must be live and arrays valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_controller_create(
    ae: *const BrunovskyAutoencoder,
    poles_re: *const f64,
    poles_im: *const f64,
    n: usize,
    plan: *const BrunovskyPlan,
    out: *mut *mut BrunovskyController,
) -> BrunovskyStatus {
    guard(|| {
        let ae = borrow(ae, "ae")?.0.clone();
        let plan = borrow(plan, "plan")?.0.clone();
        let re = slice(poles_re, n, "poles_re")?;
        let im = if poles_im.is_null() { &[][..] } else { slice(poles_im, n, "poles_im")? };
        let poles: Vec<Complex<f64>> = re
            .iter()
            .enumerate()
            .map(|(i, &r)| Complex::new(r, im.get(i).copied().unwrap_or(0.0)))
            .collect();
        let gains = pole_placement(&poles)?;
        publish(out, BrunovskyController(ClosedLoopController::new(ae, gains, plan)?))
    })
}

/// # Safety
/// `ctrl` must be NULL or a handle that is not used again.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_controller_free(ctrl: *mut BrunovskyController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Feedback gains a₀..aₙ₋₁ of the placed characteristic polynomial.
///
/// # Safety
/// `a_out` must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_controller_gains(
    ctrl: *const BrunovskyController,
    a_out: *mut f64,
    n: usize,
) -> BrunovskyStatus {
    guard(|| {
        let ctrl = &borrow(ctrl, "ctrl")?.0;
        check_len("gains", ctrl.n(), n)?;
        write_out(a_out, &ctrl.gains.a, "a_out")
    })
}

/// Control input for state `x` at step `k`.
///
/// # Safety
/// `x` must be valid for `n` doubles and `u_out` for one.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_controller_step(
    ctrl: *const BrunovskyController,
    x: *const f64,
    n: usize,
    k: usize,
    u_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let ctrl = &borrow(ctrl, "ctrl")?.0;
        check_len("state", ctrl.n(), n)?;
        let step = ctrl.control_step(slice(x, n, "x")?, k)?;
        write_scalar(u_out, step.u, "u_out")
    })
}

/// Builds the plant described by a preset name or config file path.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_system_create(
    config: *const c_char,
    out: *mut *mut BrunovskySystem,
) -> BrunovskyStatus {
    guard(|| {
        let cfg = RunConfig::load(string(config, "config")?)?;
        publish(out, BrunovskySystem(cfg.system.build()?))
    })
}

/// # Safety
/// `sys` must be NULL or a handle that is not used again.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_system_free(sys: *mut BrunovskySystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_system_state_dim(sys: *const BrunovskySystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.state_dim())
}

/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_system_sampling_time(sys: *const BrunovskySystem) -> f64 {
    sys.as_ref().map_or(f64::NAN, |s| s.0.sampling_time())
}

/// x⁺ = f(x, u).
///
/// # Safety
/// `x` and `x_out` must be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn brunovsky_system_step(
    sys: *const BrunovskySystem,
    x: *const f64,
    n: usize,
    u: f64,
    x_out: *mut f64,
) -> BrunovskyStatus {
    guard(|| {
        let sys = &borrow(sys, "sys")?.0;
        check_len("state", sys.state_dim(), n)?;
        let next = sys.step(slice(x, n, "x")?, u)?;
        write_out(x_out, &next, "x_out")
    })
}
