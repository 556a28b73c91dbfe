//! C interface to the black-start library.
//!
//! Every function returns a `BsStatus` code. On failure a description is
//! available from `bs_last_error` on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use blackstart::cli::{blackstart_run, sim_code, sizing_report, write_run, CliError, RunArgs, TriggerArg};
use blackstart::scenario::ScenarioFile;
use blackstart::sequencer::Strategy;
use blackstart::sim::{RunOutput, SimError};

pub type BsStatus = u32;

pub const BS_OK: BsStatus = 0;
pub const BS_ERR_IO: BsStatus = 1;
pub const BS_ERR_ARGUMENT: BsStatus = 2;
pub const BS_ERR_PARSE: BsStatus = 3;
pub const BS_ERR_NONCONVERGENCE: BsStatus = 4;
pub const BS_ERR_TIMEOUT: BsStatus = 5;
pub const BS_ERR_FAULT: BsStatus = 6;
pub const BS_ERR_PANIC: BsStatus = 7;

pub const BS_STRATEGY_WHCC: u32 = 0;
pub const BS_STRATEGY_HSCC: u32 = 1;

pub const BS_TRIGGERS_SCENARIO: u32 = 0;
pub const BS_TRIGGERS_CONDITION: u32 = 1;
pub const BS_TRIGGERS_SCRIPTED: u32 = 2;

/// A parsed scenario file.
pub struct BsScenario {
    inner: ScenarioFile,
}

/// The recorded output of one simulation run.
pub struct BsRun {
    inner: RunOutput,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsSizing {
    pub p_min_mw: f64,
    pub q_min_mvar: f64,
    pub s_min_mva: f64,
    pub rating_mw: f64,
    pub loss_p_mw: f64,
    pub loss_q_mvar: f64,
    pub transformer_excitation_mvar: f64,
    pub line_charging_mvar: f64,
    pub lsc_standby_mw: f64,
    pub iterations: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsSummary {
    pub complete: bool,
    pub final_step: u8,
    /// Time of step 6, or a negative value if the run did not complete.
    pub completion_time: f64,
    pub max_freq_dev_hz: f64,
    pub max_freq_dev_pct: f64,
    pub peak_pemfc_p_mw: f64,
    pub peak_pemfc_q_mvar: f64,
    pub pemfc_energy_kwh: f64,
    pub sample_count: usize,
}

/// One recorded sample without the per-bus voltages.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsSample {
    pub t: f64,
    pub step: u8,
    pub f_hz: f64,
    pub v_dc: f64,
    pub pemfc_p: f64,
    pub pemfc_q: f64,
    pub dfig_p: f64,
    pub dfig_q: f64,
    pub lsc_p: f64,
    pub elz_p: f64,
    pub aux_p: f64,
    pub aux_q: f64,
    pub loss_p: f64,
    pub loss_q: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(code: BsStatus, msg: impl Into<String>) -> BsStatus {
    set_error(msg);
    code
}

fn guard(f: impl FnOnce() -> BsStatus) -> BsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(BS_ERR_PANIC, "internal panic"))
}

fn cli_status(e: &CliError) -> BsStatus {
    status_of(e.exit_code())
}

fn status_of(exit_code: i32) -> BsStatus {
    match exit_code {
        1 => BS_ERR_IO,
        3 => BS_ERR_PARSE,
        4 => BS_ERR_NONCONVERGENCE,
        5 => BS_ERR_TIMEOUT,
        _ => BS_ERR_FAULT,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, BsStatus> {
    if p.is_null() {
        return Err(fail(BS_ERR_ARGUMENT, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BS_ERR_ARGUMENT, format!("{what} is not UTF-8")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(code) => return code,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a scenario from a TOML file; `"paper-case"` selects the built-in case.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_load(path: *const c_char, out: *mut *mut BsScenario) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return fail(BS_ERR_ARGUMENT, "out is null");
        }
        *out = ptr::null_mut();
        let path = tri!(str_arg(path, "path"));
        match ScenarioFile::load(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BsScenario { inner }));
                BS_OK
            }
            Err(e) => {
                let e = CliError::from(e);
                fail(cli_status(&e), e.to_string())
            }
        }
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_parse(text: *const c_char, out: *mut *mut BsScenario) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return fail(BS_ERR_ARGUMENT, "out is null");
        }
        *out = ptr::null_mut();
        let text = tri!(str_arg(text, "text"));
        match ScenarioFile::parse(text, "<memory>") {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BsScenario { inner }));
                BS_OK
            }
            Err(e) => fail(BS_ERR_PARSE, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_free(scenario: *mut BsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Sizes the black-start source. A NaN `margin` keeps the scenario's own.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_size(scenario: *const BsScenario, margin: f64, out: *mut BsSizing) -> BsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(BS_ERR_ARGUMENT, "null argument");
        };
        let margin = (!margin.is_nan()).then_some(margin);
        match sizing_report(&s.inner, margin) {
            Ok(r) => {
                *out = BsSizing {
                    p_min_mw: r.p_min_mw,
                    q_min_mvar: r.q_min_mvar,
                    s_min_mva: r.s_min_mva,
                    rating_mw: r.rating_mw,
                    loss_p_mw: r.losses.total_p_mw,
                    loss_q_mvar: r.losses.total_q_mvar,
                    transformer_excitation_mvar: r.losses.transformer_excitation_mvar,
                    line_charging_mvar: r.losses.line_charging_mvar,
                    lsc_standby_mw: r.lsc_standby_flow_mw,
                    iterations: r.iterations as u32,
                };
                BS_OK
            }
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// Simulates the restoration sequence. Non-positive `dt` or `t_end` keep
/// the scenario values. When the run faults after starting, `*out` still
/// receives the output recorded up to the fault.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_run(
    scenario: *const BsScenario,
    strategy: u32,
    triggers: u32,
    dt: f64,
    t_end: f64,
    out: *mut *mut BsRun,
) -> BsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(BS_ERR_ARGUMENT, "null argument");
        };
        *out = ptr::null_mut();
        let strategy = match strategy {
            BS_STRATEGY_WHCC => Strategy::Whcc,
            BS_STRATEGY_HSCC => Strategy::Hscc,
            other => return fail(BS_ERR_ARGUMENT, format!("unknown strategy {other}")),
        };
        let triggers = match triggers {
            BS_TRIGGERS_SCENARIO => None,
            BS_TRIGGERS_CONDITION => Some(TriggerArg::Condition),
            BS_TRIGGERS_SCRIPTED => Some(TriggerArg::Scripted),
            other => return fail(BS_ERR_ARGUMENT, format!("unknown trigger mode {other}")),
        };
        let args = RunArgs {
            triggers,
            dt: (dt > 0.0).then_some(dt),
            t_end: (t_end > 0.0).then_some(t_end),
        };
        match blackstart_run(&s.inner, strategy, &args) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BsRun { inner }));
                BS_OK
            }
            Err(e) => {
                if let Some(partial) = e.partial() {
                    *out = Box::into_raw(Box::new(BsRun { inner: partial.clone() }));
                }
                fail(sim_status(&e), e.to_string())
            }
        }
    })
}

fn sim_status(e: &SimError) -> BsStatus {
    status_of(sim_code(e))
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_run_summary(run: *const BsRun, out: *mut BsSummary) -> BsStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(BS_ERR_ARGUMENT, "null argument");
        };
        let s = &r.inner.summary;
        *out = BsSummary {
            complete: s.complete,
            final_step: s.final_step,
            completion_time: s.completion_time.unwrap_or(-1.0),
            max_freq_dev_hz: s.max_freq_dev_hz,
            max_freq_dev_pct: s.max_freq_dev_pct,
            peak_pemfc_p_mw: s.peak_pemfc_p,
            peak_pemfc_q_mvar: s.peak_pemfc_q,
            pemfc_energy_kwh: s.pemfc_energy_kwh,
            sample_count: r.inner.series.samples.len(),
        };
        BS_OK
    })
}

/// Copies sample `index` into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_run_sample(run: *const BsRun, index: usize, out: *mut BsSample) -> BsStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(BS_ERR_ARGUMENT, "null argument");
        };
        let Some(s) = r.inner.series.samples.get(index) else {
            return fail(BS_ERR_ARGUMENT, format!("sample {index} out of range"));
        };
        *out = BsSample {
            t: s.t,
            step: s.step,
            f_hz: s.f_hz,
            v_dc: s.v_dc,
            pemfc_p: s.pemfc_p,
            pemfc_q: s.pemfc_q,
            dfig_p: s.dfig_p,
            dfig_q: s.dfig_q,
            lsc_p: s.lsc_p,
            elz_p: s.elz_p,
            aux_p: s.aux_p,
            aux_q: s.aux_q,
            loss_p: s.loss_p,
            loss_q: s.loss_q,
        };
        BS_OK
    })
}

/// Writes timeseries.csv, events.jsonl and summary.json into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bs_run_write(run: *const BsRun, dir: *const c_char) -> BsStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(BS_ERR_ARGUMENT, "run is null");
        };
        let dir = tri!(str_arg(dir, "dir"));
        match write_run(Path::new(dir), &r.inner) {
            Ok(()) => BS_OK,
            Err(e) => fail(cli_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_run_free(run: *mut BsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
