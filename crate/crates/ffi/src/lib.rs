//! C ABI for the actuator-selection LQR simulator.
//!
//! Conventions:
//!
//! * Objects cross the boundary as opaque handles created by `*_generate` /
//!   `*_load` / `*_execute` and released by the matching `*_free`.
//! * Every fallible call returns an [`ActselStatus`]; `ACTSEL_STATUS_OK` is
//!   zero. On failure a human-readable message is stored per thread and can
//!   be read back with [`actsel_last_error_message`].
//! * Panics never unwind across the boundary: they are caught and reported
//!   as `ACTSEL_STATUS_PANIC`.
//! * Accessors taking a handle tolerate null (they return zero / NaN), so
//!   bindings can be written without pre-checks; functions that allocate or
//!   compute validate every pointer and report `ACTSEL_STATUS_NULL_POINTER`.
//!
//! The C header mirroring this surface is generated at build time into
//! `include/actsel.h` and committed alongside the crate.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use actsel::lqr::{optimal_expected_cost, riccati_backward};
use actsel::model::{generate_random_instance, ActuatorSubset, CostSchedule, InstanceParams, SystemInstance};
use actsel::online::{run_algorithm1, RegretReport, RunConfig, Tau1Mode};
use actsel::{bandit, io, Error};
use nalgebra::DMatrix;

/// Result of every fallible call in this interface. `OK` is zero; all other
/// codes leave a message readable via `actsel_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActselStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// An argument was structurally invalid (bad dimension, range, subset).
    InvalidArgument = 3,
    /// The requested epoch schedule cannot exist for the given horizon.
    InfeasibleSchedule = 4,
    /// A numerical routine failed (factorization, convergence, identity check).
    Numerical = 5,
    /// Random instance generation exhausted its retry budget.
    Generation = 6,
    /// A verification campaign found violations.
    VerificationFailed = 7,
    /// A structured input file did not match the expected format.
    Format = 8,
    /// An underlying I/O operation failed.
    Io = 9,
    /// An internal panic was caught at the boundary.
    Panic = 10,
}

/// Opaque handle to a certified system instance.
pub struct ActselInstance {
    inner: SystemInstance,
}

/// Opaque handle to a finished online run and its full regret accounting.
pub struct ActselRun {
    report: RegretReport,
}

/// Parameters of one online run over the identity cost family
/// `Q = q_scale I`, `Q_f = qf_scale I`, `R = r_scale I`.
///
/// Obtain defaults from `actsel_run_options_default` and override fields as
/// needed before calling `actsel_run_execute`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ActselRunOptions {
    /// Number of rounds `T`; must be at least 1.
    pub horizon: usize,
    /// Episode length `N` (stages per round); must be at least 1.
    pub n_steps: usize,
    /// Master seed; every random draw in the run derives from it.
    pub seed: u64,
    /// Ridge weight of the least-squares estimator; must be positive.
    pub lambda: f64,
    /// Fixed estimation-phase length. Zero selects the logarithmic default
    /// `tau1 = tau1_log_c * ceil(ln T)` instead.
    pub tau1_fixed: usize,
    /// Multiplier of the logarithmic default; ignored when `tau1_fixed > 0`.
    pub tau1_log_c: usize,
    /// Fixed reward-normalization ceiling. A non-positive or non-finite
    /// value selects the adaptive running maximum.
    pub ceiling: f64,
    /// Scale of the per-stage state cost.
    pub q_scale: f64,
    /// Scale of the terminal state cost.
    pub qf_scale: f64,
    /// Scale of the input cost.
    pub r_scale: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    let stored = CString::new(sanitized).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn fail(status: ActselStatus, message: &str) -> ActselStatus {
    set_last_error(message);
    status
}

fn status_of(error: &Error) -> ActselStatus {
    match error {
        Error::InvalidArgument(_) => ActselStatus::InvalidArgument,
        Error::InfeasibleSchedule(_) => ActselStatus::InfeasibleSchedule,
        Error::Numerical(_) => ActselStatus::Numerical,
        Error::Generation { .. } => ActselStatus::Generation,
        Error::VerificationFailed(_) => ActselStatus::VerificationFailed,
        Error::Format(_) => ActselStatus::Format,
        Error::Io(_) => ActselStatus::Io,
    }
}

fn report(error: &Error) -> ActselStatus {
    fail(status_of(error), &error.to_string())
}

/// Run `body` with panics converted to `ACTSEL_STATUS_PANIC`.
fn guarded<F: FnOnce() -> ActselStatus>(body: F) -> ActselStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic payload".to_string());
            fail(ActselStatus::Panic, &format!("internal panic: {message}"))
        }
    }
}

/// # Safety
/// `path` must be a readable nul-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, ActselStatus> {
    if path.is_null() {
        return Err(fail(ActselStatus::NullPointer, "path pointer is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(text) => Ok(Path::new(text)),
        Err(_) => Err(fail(ActselStatus::Utf8, "path is not valid UTF-8")),
    }
}

// ---------------------------------------------------------------------------
// Library metadata and error reporting
// ---------------------------------------------------------------------------

/// Version of the library as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn actsel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread (empty until a
/// call fails). The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn actsel_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Instance lifecycle
// ---------------------------------------------------------------------------

/// Generate a certified random instance.
///
/// `block_widths` may be null, in which case every one of the
/// `actuator_count` actuators gets a single input column; otherwise it must
/// point at `actuator_count` entries. On success `*out` owns the instance;
/// release it with `actsel_instance_free`.
///
/// # Safety
/// `block_widths` is either null or readable for `actuator_count` entries,
/// and `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_generate(
    state_dim: usize,
    actuator_count: usize,
    block_widths: *const usize,
    budget: usize,
    spectral_radius: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut ActselInstance,
) -> ActselStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ActselStatus::NullPointer, "output handle pointer is null");
        }
        let widths = if block_widths.is_null() {
            vec![1; actuator_count]
        } else {
            slice::from_raw_parts(block_widths, actuator_count).to_vec()
        };
        let params = InstanceParams {
            state_dim,
            block_widths: widths,
            budget,
            spectral_radius,
            sigma,
        };
        match generate_random_instance(&params, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ActselInstance { inner }));
                ActselStatus::Ok
            }
            Err(e) => report(&e),
        }
    })
}

/// Load an instance from its JSON file format.
///
/// # Safety
/// `path` must be a readable nul-terminated string and `out` a valid
/// destination pointer.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_load(
    path: *const c_char,
    out: *mut *mut ActselInstance,
) -> ActselStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ActselStatus::NullPointer, "output handle pointer is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match io::load_instance(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ActselInstance { inner }));
                ActselStatus::Ok
            }
            Err(e) => report(&e),
        }
    })
}

/// Save an instance to its JSON file format (bitwise reproducible).
///
/// # Safety
/// `instance` must be a live handle and `path` a readable nul-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_save(
    instance: *const ActselInstance,
    path: *const c_char,
) -> ActselStatus {
    guarded(|| {
        let Some(handle) = instance.as_ref() else {
            return fail(ActselStatus::NullPointer, "instance handle is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match io::save_instance(path, &handle.inner, None) {
            Ok(()) => ActselStatus::Ok,
            Err(e) => report(&e),
        }
    })
}

/// Release an instance handle. Null is ignored.
///
/// # Safety
/// `instance` must be null or a handle returned by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_free(instance: *mut ActselInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// State dimension `n` (zero when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_state_dim(instance: *const ActselInstance) -> usize {
    instance.as_ref().map_or(0, |h| h.inner.state_dim())
}

/// Number of actuators `q` (zero when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_actuator_count(instance: *const ActselInstance) -> usize {
    instance.as_ref().map_or(0, |h| h.inner.actuator_count())
}

/// Total input dimension `m` (zero when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_input_dim(instance: *const ActselInstance) -> usize {
    instance.as_ref().map_or(0, |h| h.inner.input_dim())
}

/// Selection budget `H` (zero when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_budget(instance: *const ActselInstance) -> usize {
    instance.as_ref().map_or(0, |h| h.inner.budget())
}

/// Number of exploration groups `p` (zero when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_group_count(instance: *const ActselInstance) -> usize {
    instance.as_ref().map_or(0, |h| h.inner.group_count())
}

/// Process-noise standard deviation (NaN when the handle is null).
///
/// # Safety
/// `instance` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_instance_sigma(instance: *const ActselInstance) -> f64 {
    instance.as_ref().map_or(f64::NAN, |h| h.inner.sigma())
}

/// Exact expected episode cost of the optimal controller for one actuator
/// subset under the identity cost family, written to `*out_cost`.
///
/// `indices` must point at `index_count` strictly increasing actuator
/// indices.
///
/// # Safety
/// `instance` must be a live handle, `indices` readable for `index_count`
/// entries, and `out_cost` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn actsel_subset_optimal_cost(
    instance: *const ActselInstance,
    indices: *const usize,
    index_count: usize,
    n_steps: usize,
    q_scale: f64,
    qf_scale: f64,
    r_scale: f64,
    out_cost: *mut f64,
) -> ActselStatus {
    guarded(|| {
        let Some(handle) = instance.as_ref() else {
            return fail(ActselStatus::NullPointer, "instance handle is null");
        };
        if indices.is_null() {
            return fail(ActselStatus::NullPointer, "subset index pointer is null");
        }
        if out_cost.is_null() {
            return fail(ActselStatus::NullPointer, "output cost pointer is null");
        }
        let picked = slice::from_raw_parts(indices, index_count).to_vec();
        let inner = &handle.inner;
        let subset = match ActuatorSubset::new(picked, inner.actuator_count()) {
            Ok(s) => s,
            Err(e) => return report(&e),
        };
        let n = inner.state_dim();
        let q = DMatrix::identity(n, n) * q_scale;
        let qf = DMatrix::identity(n, n) * qf_scale;
        let r_full = DMatrix::identity(inner.input_dim(), inner.input_dim()) * r_scale;
        let (b_s, r_s) = match inner.restrict(&r_full, &subset) {
            Ok(pair) => pair,
            Err(e) => return report(&e),
        };
        match riccati_backward(inner.a(), &b_s, &q, &qf, &r_s, n_steps) {
            Ok(schedule) => {
                *out_cost = optimal_expected_cost(&schedule, inner.sigma());
                ActselStatus::Ok
            }
            Err(e) => report(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Online runs
// ---------------------------------------------------------------------------

/// Default run options: episode length 5, unit ridge weight, logarithmic
/// estimation schedule with multiplier 1, adaptive ceiling, and the
/// `Q = I`, `Q_f = 2I`, `R = I` cost family.
#[no_mangle]
pub extern "C" fn actsel_run_options_default(horizon: usize, seed: u64) -> ActselRunOptions {
    ActselRunOptions {
        horizon,
        n_steps: 5,
        seed,
        lambda: 1.0,
        tau1_fixed: 0,
        tau1_log_c: 1,
        ceiling: 0.0,
        q_scale: 1.0,
        qf_scale: 2.0,
        r_scale: 1.0,
    }
}

/// Execute one full online run (explore, estimate, select, control) and
/// hand back the finished report. On success `*out` owns the run; release
/// it with `actsel_run_free`.
///
/// # Safety
/// `instance` must be a live handle, `options` readable, and `out` a valid
/// destination pointer.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_execute(
    instance: *const ActselInstance,
    options: *const ActselRunOptions,
    out: *mut *mut ActselRun,
) -> ActselStatus {
    guarded(|| {
        let Some(handle) = instance.as_ref() else {
            return fail(ActselStatus::NullPointer, "instance handle is null");
        };
        let Some(options) = options.as_ref() else {
            return fail(ActselStatus::NullPointer, "options pointer is null");
        };
        if out.is_null() {
            return fail(ActselStatus::NullPointer, "output handle pointer is null");
        }
        let inner = &handle.inner;
        let schedule = match CostSchedule::constant_identity(
            options.horizon,
            inner.state_dim(),
            inner.input_dim(),
            options.q_scale,
            options.qf_scale,
            options.r_scale,
        ) {
            Ok(s) => s,
            Err(e) => return report(&e),
        };
        let tau1 = if options.tau1_fixed > 0 {
            Tau1Mode::Fixed(options.tau1_fixed)
        } else {
            Tau1Mode::PracticalLogT(options.tau1_log_c)
        };
        let ceiling = if options.ceiling.is_finite() && options.ceiling > 0.0 {
            bandit::CostCeiling::Fixed(options.ceiling)
        } else {
            bandit::CostCeiling::Adaptive
        };
        let mut config = RunConfig::new(options.horizon, options.n_steps, options.seed);
        config.tau1 = tau1;
        config.lambda = options.lambda;
        config.ceiling = ceiling;
        match run_algorithm1(inner, &schedule, &config) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(ActselRun { report }));
                ActselStatus::Ok
            }
            Err(e) => report(&e),
        }
    })
}

/// Release a run handle. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle returned by this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_free(run: *mut ActselRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of rounds in the run (zero when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_horizon(run: *const ActselRun) -> usize {
    run.as_ref().map_or(0, |h| h.report.config.horizon)
}

/// Cumulative regret `R_A` (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_regret(run: *const ActselRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |h| h.report.regret)
}

/// Sum of realized episode costs (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_cumulative_cost(run: *const ActselRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |h| h.report.cumulative_realized)
}

/// Sum of per-round offline optima (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_oracle_total(run: *const ActselRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |h| h.report.oracle_total)
}

/// Resolved estimation-phase length (zero when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_tau1(run: *const ActselRun) -> usize {
    run.as_ref().map_or(0, |h| h.report.schedule.tau1())
}

/// Number of epochs in the run's schedule (zero when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_epoch_count(run: *const ActselRun) -> usize {
    run.as_ref().map_or(0, |h| h.report.schedule.epoch_count())
}

/// Number of bandit arms (admissible subsets; zero when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_action_count(run: *const ActselRun) -> usize {
    run.as_ref().map_or(0, |h| h.report.action_count)
}

/// Final reward-normalization ceiling (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_final_ceiling(run: *const ActselRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |h| h.report.final_ceiling)
}

/// Copy the prefix-averaged regret series `R_A(t)/t`, `t = 1..=T`, into
/// `buffer` (up to `capacity` values) and return the full series length.
/// Call with a null buffer (capacity zero) to query the required size.
///
/// # Safety
/// `run` must be null or a live handle; `buffer` must be null or writable
/// for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_regret_per_round(
    run: *const ActselRun,
    buffer: *mut f64,
    capacity: usize,
) -> usize {
    let Some(handle) = run.as_ref() else {
        return 0;
    };
    let series = &handle.report.regret_per_round;
    if !buffer.is_null() {
        let take = series.len().min(capacity);
        slice::from_raw_parts_mut(buffer, take).copy_from_slice(&series[..take]);
    }
    series.len()
}

/// Write the run's per-round table to `path` in the same CSV schema the
/// command-line tool emits.
///
/// # Safety
/// `run` must be a live handle and `path` a readable nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn actsel_run_save_csv(
    run: *const ActselRun,
    path: *const c_char,
) -> ActselStatus {
    guarded(|| {
        let Some(handle) = run.as_ref() else {
            return fail(ActselStatus::NullPointer, "run handle is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match io::write_run_csv(path, &handle.report) {
            Ok(()) => ActselStatus::Ok,
            Err(e) => report(&e),
        }
    })
}
