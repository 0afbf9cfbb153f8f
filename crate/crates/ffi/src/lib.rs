//! C ABI over the gridmpc closed-loop simulator.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`GridmpcStatus`]; on
//! failure, `gridmpc_last_error` describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gridmpc::scenario::{run_closed_loop, ControlMode, Scenario, ScenarioError, SimulationConfig, SimulationLog};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed case, profiles or configuration.
    InvalidInput = 3,
    /// The plant power flow diverged.
    RuntimeFailure = 4,
    OutOfRange = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Controller selector for [`gridmpc_simulate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridmpcMode {
    None = 0,
    Cmpc = 1,
    D3mpc = 2,
    Vvc = 3,
}

/// A case and its profiles.
pub struct GridmpcScenario {
    inner: Scenario,
}

/// The per-instant record of one closed-loop run.
pub struct GridmpcLog {
    inner: SimulationLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (GridmpcStatus, String)>) -> GridmpcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GridmpcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GridmpcStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GridmpcStatus, String)> {
    if p.is_null() {
        return Err((GridmpcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (GridmpcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn scenario_status(e: ScenarioError) -> (GridmpcStatus, String) {
    let status = match e {
        ScenarioError::PlantDiverged { .. } => GridmpcStatus::RuntimeFailure,
        _ => GridmpcStatus::InvalidInput,
    };
    (status, e.to_string())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next gridmpc call on the same thread.
#[no_mangle]
pub extern "C" fn gridmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gridmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a MATPOWER (or JSON) case and a profile CSV.
///
/// # Safety
/// `case_text` and `profiles_text` must be NUL-terminated strings and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_scenario_from_text(
    case_text: *const c_char,
    profiles_text: *const c_char,
    out: *mut *mut GridmpcScenario,
) -> GridmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err((GridmpcStatus::NullPointer, "out is null".into()));
        }
        let case = text(case_text, "case_text")?;
        let profiles = text(profiles_text, "profiles_text")?;
        let inner = Scenario::from_texts(case, profiles).map_err(scenario_status)?;
        *out = Box::into_raw(Box::new(GridmpcScenario { inner }));
        Ok(())
    })
}

/// Bundled IEEE grid with its day profile; `buses` is 30 or 57.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_scenario_bundled(buses: c_int, out: *mut *mut GridmpcScenario) -> GridmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err((GridmpcStatus::NullPointer, "out is null".into()));
        }
        let inner = match buses {
            30 => Scenario::ieee30(),
            57 => Scenario::ieee57(),
            n => return Err((GridmpcStatus::OutOfRange, format!("no bundled {n}-bus grid (use 30 or 57)"))),
        };
        *out = Box::into_raw(Box::new(GridmpcScenario { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from a `gridmpc_scenario_*` constructor (or be null) and
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_scenario_free(s: *mut GridmpcScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs the closed loop with default settings, prediction error bound
/// `eps` and `seed`. `mode` takes a [`GridmpcMode`] value.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_simulate(
    scenario: *const GridmpcScenario,
    mode: c_int,
    eps: f64,
    seed: u64,
    out: *mut *mut GridmpcLog,
) -> GridmpcStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return Err((GridmpcStatus::NullPointer, "scenario or out is null".into()));
        }
        let mode = match mode {
            m if m == GridmpcMode::None as c_int => ControlMode::None,
            m if m == GridmpcMode::Cmpc as c_int => ControlMode::Cmpc,
            m if m == GridmpcMode::D3mpc as c_int => ControlMode::D3mpc,
            m if m == GridmpcMode::Vvc as c_int => ControlMode::Vvc,
            m => return Err((GridmpcStatus::OutOfRange, format!("unknown mode {m}"))),
        };
        let sc = &(*scenario).inner;
        let mut cfg = SimulationConfig::new(mode, eps, seed);
        cfg.admm.tol_inf = gridmpc::mpc_dist::default_tol_inf(sc.case.buses.len());
        let inner = run_closed_loop(sc, &cfg).map_err(scenario_status)?;
        *out = Box::into_raw(Box::new(GridmpcLog { inner }));
        Ok(())
    })
}

/// # Safety
/// `log` must come from [`gridmpc_simulate`] (or be null) and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_free(log: *mut GridmpcLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Instants in the run; 0 for a null handle.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_instants(log: *const GridmpcLog) -> usize {
    log.as_ref().map_or(0, |l| l.inner.records.len())
}

/// Buses per instant; 0 for a null handle.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_buses(log: *const GridmpcLog) -> usize {
    log.as_ref().map_or(0, |l| l.inner.case_ids.len())
}

unsafe fn log_entry(
    log: *const GridmpcLog,
    t: usize,
    bus: usize,
    out: *mut f64,
    pick: impl FnOnce(&SimulationLog, usize, usize) -> f64,
) -> GridmpcStatus {
    guard(|| {
        let Some(l) = log.as_ref() else {
            return Err((GridmpcStatus::NullPointer, "log is null".into()));
        };
        if out.is_null() {
            return Err((GridmpcStatus::NullPointer, "out is null".into()));
        }
        let l = &l.inner;
        if t >= l.records.len() || bus >= l.case_ids.len() {
            return Err((
                GridmpcStatus::OutOfRange,
                format!("(t={t}, bus={bus}) outside {} instants x {} buses", l.records.len(), l.case_ids.len()),
            ));
        }
        *out = pick(l, t, bus);
        Ok(())
    })
}

/// Voltage magnitude at instant `t` of the bus at position `bus` (buses in
/// ascending case order).
///
/// # Safety
/// `log` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_voltage(log: *const GridmpcLog, t: usize, bus: usize, out: *mut f64) -> GridmpcStatus {
    log_entry(log, t, bus, out, |l, t, b| l.records[t].state.v[b])
}

/// Compensation in force at instant `t`.
///
/// # Safety
/// `log` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_control(log: *const GridmpcLog, t: usize, bus: usize, out: *mut f64) -> GridmpcStatus {
    log_entry(log, t, bus, out, |l, t, b| l.records[t].applied_u[b])
}

/// Case bus number at position `bus`; 0 when out of range.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_bus_id(log: *const GridmpcLog, bus: usize) -> usize {
    log.as_ref().and_then(|l| l.inner.case_ids.get(bus).copied()).unwrap_or(0)
}

/// Lowest voltage over the run; NaN for a null handle.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_min_voltage(log: *const GridmpcLog) -> f64 {
    log.as_ref().map_or(f64::NAN, |l| l.inner.min_voltage())
}

/// Highest voltage over the run; NaN for a null handle.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_max_voltage(log: *const GridmpcLog) -> f64 {
    log.as_ref().map_or(f64::NAN, |l| l.inner.max_voltage())
}

/// (instant, bus) pairs outside the voltage band.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_violations(log: *const GridmpcLog) -> usize {
    log.as_ref().map_or(0, |l| l.inner.violation_count())
}

/// Instants where the controller kept the previous compensation.
///
/// # Safety
/// `log` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_log_failures(log: *const GridmpcLog) -> usize {
    log.as_ref().map_or(0, |l| l.inner.failure_count())
}

/// Runs the command-line tool in-process and returns its exit code
/// (0 success, 1 invalid input, 2 runtime failure). `argv[0]` is the
/// program name.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gridmpc_cli_run(argc: c_int, argv: *const *const c_char) -> c_int {
    clear_error();
    if argc < 0 || (argc > 0 && argv.is_null()) {
        set_error("argv is null");
        return gridmpc::cli::EXIT_INVALID;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for k in 0..argc as usize {
        match text(*argv.add(k), "argv entry") {
            Ok(s) => args.push(s.to_string()),
            Err((_, msg)) => {
                set_error(msg);
                return gridmpc::cli::EXIT_INVALID;
            }
        }
    }
    catch_unwind(|| gridmpc::cli::run(args)).unwrap_or_else(|_| {
        set_error("internal panic");
        gridmpc::cli::EXIT_RUNTIME
    })
}
