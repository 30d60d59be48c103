//! C interface to the freqreg toolkit.
//!
//! Every fallible function returns an [`FrStatus`]. On failure the message
//! is available from [`fr_last_error_message`] on the same thread until the
//! next failing call. Handles are opaque and must be released with their
//! `_free` function; passing NULL to a `_free` function is a no-op. Panics
//! never cross the boundary and are reported as `FR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use freqreg::error::Error;
use freqreg::fan::FanCurves;
use freqreg::harness::{export_results, run_experiment, Scenario};
use freqreg::regulation::{Branch, GainSchedule, TrackingLoop, TrackingSlot, DEFAULT_EPSILON, DEFAULT_NOISE_W, DEFAULT_TAU_S, LOOP_PERIOD_S};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Failed = 4,
    Panic = 5,
}

/// Fan curves (flow to power, speed to power, speed to flow).
pub struct FrFanCurves(FanCurves);

/// A switched tracking controller driving a simulated fan.
pub struct FrTrackingLoop {
    inner: TrackingLoop,
    rng: ChaCha8Rng,
}

/// One 4-s tracking step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FrTrackingSample {
    /// Requested power, W.
    pub p_d: f64,
    /// Measured fan power used by the controller, W.
    pub p_f: f64,
    /// Commanded fan speed, percent.
    pub n_f: f64,
    /// 0 for the feedforward branch, 1 for PI.
    pub branch: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::Csv { .. } => FrStatus::Io,
            Error::Level { .. } | Error::RankDeficient(_) | Error::NonMonotone { .. } | Error::Infeasible { .. } => FrStatus::Failed,
            _ => FrStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FrStatus::NullPointer, format!("`{what}` is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure(FrStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The reference fan curves.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_curves_reference(out: *mut *mut FrFanCurves) -> FrStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(FrFanCurves(FanCurves::reference())));
        Ok(())
    })
}

/// Curves from a JSON file as written by `freqreg fit-fan --out`.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be NULL or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_curves_from_json(path: *const c_char, out: *mut *mut FrFanCurves) -> FrStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(FrFanCurves(FanCurves::from_json_file(&path)?)));
        Ok(())
    })
}

/// # Safety
/// `curves` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_curves_free(curves: *mut FrFanCurves) {
    if !curves.is_null() {
        drop(Box::from_raw(curves));
    }
}

/// Fan power (W) at air mass flow `flow` (kg/s).
///
/// # Safety
/// `curves` must be NULL or a live handle; `out` NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_flow_to_power(curves: *const FrFanCurves, flow: f64, out: *mut f64) -> FrStatus {
    guard(|| {
        let c = curves.as_ref().ok_or_else(|| null("curves"))?;
        *out_arg(out, "out")? = c.0.flow_to_power(flow);
        Ok(())
    })
}

/// Air mass flow (kg/s) drawing fan power `power` (W).
///
/// # Safety
/// `curves` must be NULL or a live handle; `out` NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_power_to_flow(curves: *const FrFanCurves, power: f64, out: *mut f64) -> FrStatus {
    guard(|| {
        let c = curves.as_ref().ok_or_else(|| null("curves"))?;
        *out_arg(out, "out")? = c.0.power_to_flow(power)?;
        Ok(())
    })
}

/// Electric reserves (W) for baseline flow `flow` and thermal reserves
/// `r_u`, `r_d` (kg/s).
///
/// # Safety
/// `curves` must be NULL or a live handle; `up` and `down` NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_fan_reserve_capacities(curves: *const FrFanCurves, flow: f64, r_u: f64, r_d: f64, up: *mut f64, down: *mut f64) -> FrStatus {
    guard(|| {
        let c = curves.as_ref().ok_or_else(|| null("curves"))?;
        let (up, down) = (out_arg(up, "up")?, out_arg(down, "down")?);
        let pair = c.0.reserve_capacities(flow, r_u, r_d)?;
        *up = pair.up;
        *down = pair.down;
        Ok(())
    })
}

/// A tracking loop with the tuned gain schedule, default deadband and fan
/// dynamics, starting at fan power `p_initial` (W). `seed` drives the
/// simulated measurement noise.
///
/// # Safety
/// `curves` must be NULL or a live handle; `out` NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_tracking_new(curves: *const FrFanCurves, p_initial: f64, seed: u64, out: *mut *mut FrTrackingLoop) -> FrStatus {
    guard(|| {
        let c = curves.as_ref().ok_or_else(|| null("curves"))?;
        let out = out_arg(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = TrackingLoop::new(&c.0, GainSchedule::tuned(), DEFAULT_EPSILON, DEFAULT_TAU_S, DEFAULT_NOISE_W, p_initial, &mut rng)?;
        *out = Box::into_raw(Box::new(FrTrackingLoop { inner, rng }));
        Ok(())
    })
}

/// Advances the loop by one 4-s period at time `t` (s) with regulation
/// signal `w` around baseline `p_s` and reserves `r_u`, `r_d` (all W).
///
/// # Safety
/// `tracking` must be NULL or a live handle; `out` NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fr_tracking_tick(tracking: *mut FrTrackingLoop, t: f64, w: f64, p_s: f64, r_u: f64, r_d: f64, out: *mut FrTrackingSample) -> FrStatus {
    guard(|| {
        let lp = tracking.as_mut().ok_or_else(|| null("tracking"))?;
        let out = out_arg(out, "out")?;
        if !(w.is_finite() && (-1.0..=1.0).contains(&w)) {
            return Err(Failure(FrStatus::InvalidArgument, format!("w must lie in [-1, 1], got {w}")));
        }
        if ![p_s, r_u, r_d].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Failure(FrStatus::InvalidArgument, "p_s, r_u and r_d must be finite and non-negative".into()));
        }
        let slot = TrackingSlot { p_s, r_u, r_d };
        let row = lp.inner.tick(t, w, &slot, LOOP_PERIOD_S, &mut lp.rng);
        *out = FrTrackingSample { p_d: row.p_d, p_f: row.p_f, n_f: row.n_f, branch: i32::from(row.branch == Branch::Pi) };
        Ok(())
    })
}

/// # Safety
/// `tracking` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fr_tracking_free(tracking: *mut FrTrackingLoop) {
    if !tracking.is_null() {
        drop(Box::from_raw(tracking));
    }
}

/// Runs the closed-loop experiment described by the scenario JSON at
/// `scenario_path` and exports the result directory to `out_dir`. A
/// negative `days` keeps the scenario's value, as does a NULL `seed`.
///
/// # Safety
/// The paths must be NULL or NUL-terminated strings; `seed` must be NULL or
/// valid for reads.
#[no_mangle]
pub unsafe extern "C" fn fr_simulate(scenario_path: *const c_char, out_dir: *const c_char, days: i32, seed: *const u64) -> FrStatus {
    guard(|| {
        let mut sc = Scenario::load(&path_arg(scenario_path, "scenario_path")?)?;
        let out = path_arg(out_dir, "out_dir")?;
        if days >= 0 {
            sc.days = days as usize;
        }
        if let Some(s) = seed.as_ref() {
            sc.seed = *s;
        }
        export_results(&run_experiment(&sc)?, &out)?;
        Ok(())
    })
}
