//! C ABI over `mmb-core`.
//!
//! Objects cross the boundary as opaque handles created by `mmb_*` constructors and released by
//! the matching `*_free`. Every fallible call returns an [`MmbStatus`]; on failure the message is
//! available from [`mmb_last_error_message`] on the same thread. Strings returned to the caller
//! are released with [`mmb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mmb_core::driver::{
    bisection_maxmin, check_feasibility, qos_min_power, BisectionConfig, MaxMinResult, QosConfig,
    SolverKind,
};
use mmb_core::scenario::{generate_scenario, Scenario, ScenarioConfig};
use mmb_core::solvers::{SolverConfig, Verdict};
use mmb_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    Numerical = 5,
    QosInfeasible = 6,
    Io = 7,
    Parse = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmbSolver {
    Standard = 0,
    Randomized = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmbVerdict {
    Feasible = 0,
    Infeasible = 1,
    Undecided = 2,
}

/// Solver settings. Fill with [`mmb_solver_options_default`] or
/// [`mmb_solver_options_qos_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmbSolverOptions {
    pub solver: MmbSolver,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub max_iter: u64,
    pub opg_tol: f64,
    pub feas_tol: f64,
    pub seed: u64,
    pub threads: u32,
    pub warm_start: bool,
}

/// Outcome of one feasibility check.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmbCheckResult {
    pub verdict: MmbVerdict,
    pub final_f: f64,
    pub iterations: u64,
}

/// Outcome of a min-power solve.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmbQosResult {
    pub verdict: MmbVerdict,
    pub total_power: f64,
    pub min_user_rate: f64,
    pub iterations: u64,
}

/// Opaque scenario handle.
pub struct MmbScenario(Scenario);

/// Opaque max-min result handle.
pub struct MmbMaxMinResult(MaxMinResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

#[derive(Debug)]
struct Failure(MmbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig { .. } => MmbStatus::InvalidConfig,
            Error::DimensionMismatch { .. } => MmbStatus::DimensionMismatch,
            Error::QosInfeasible { .. } => MmbStatus::QosInfeasible,
            Error::Io(_) => MmbStatus::Io,
            Error::Json(_) | Error::Malformed(_) => MmbStatus::Parse,
            Error::NonFinite(_) | Error::NotSingleUser { .. } | Error::TooLargeForDense { .. } => {
                MmbStatus::InvalidArgument
            }
            _ => MmbStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: MmbStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MmbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            MmbStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(MmbStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(MmbStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MmbStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MmbStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(MmbStatus::InvalidArgument, "string contains a NUL byte"))
}

fn verdict(v: Verdict) -> MmbVerdict {
    match v {
        Verdict::Feasible => MmbVerdict::Feasible,
        Verdict::Infeasible => MmbVerdict::Infeasible,
        Verdict::Undecided => MmbVerdict::Undecided,
    }
}

fn options_from(config: &SolverConfig, solver: SolverKind) -> MmbSolverOptions {
    MmbSolverOptions {
        solver: match solver {
            SolverKind::Standard => MmbSolver::Standard,
            SolverKind::Randomized => MmbSolver::Randomized,
        },
        beta: config.beta,
        alpha: config.alpha,
        alpha_bar: config.alpha_bar,
        max_iter: config.max_iter as u64,
        opg_tol: config.opg_tol,
        feas_tol: config.feas_tol,
        seed: config.seed,
        threads: config.threads as u32,
        warm_start: config.warm_start,
    }
}

fn options_into(o: &MmbSolverOptions) -> Result<(SolverKind, SolverConfig), Failure> {
    let solver = match o.solver {
        MmbSolver::Standard => SolverKind::Standard,
        MmbSolver::Randomized => SolverKind::Randomized,
    };
    let config = SolverConfig {
        beta: o.beta,
        alpha: o.alpha,
        alpha_bar: o.alpha_bar,
        max_iter: usize::try_from(o.max_iter)
            .map_err(|_| fail(MmbStatus::InvalidConfig, "max_iter does not fit in usize"))?,
        opg_tol: o.opg_tol,
        feas_tol: o.feas_tol,
        seed: o.seed,
        threads: o.threads as usize,
        warm_start: o.warm_start,
        ..SolverConfig::default()
    };
    config.validate()?;
    Ok((solver, config))
}

/// Message of the last failed call on this thread, or null. Valid until the next `mmb_*` call
/// on the same thread.
#[no_mangle]
pub extern "C" fn mmb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Max-min defaults.
///
/// # Safety
/// `options` must be null or point to writable memory for one `MmbSolverOptions`.
#[no_mangle]
pub unsafe extern "C" fn mmb_solver_options_default(options: *mut MmbSolverOptions) -> MmbStatus {
    guard(|| {
        *out(options, "options")? = options_from(&SolverConfig::default(), SolverKind::Standard);
        Ok(())
    })
}

/// Min-power defaults.
///
/// # Safety
/// As for [`mmb_solver_options_default`].
#[no_mangle]
pub unsafe extern "C" fn mmb_solver_options_qos_default(options: *mut MmbSolverOptions) -> MmbStatus {
    guard(|| {
        let q = QosConfig::default();
        *out(options, "options")? = options_from(&q.solver_config, q.solver);
        Ok(())
    })
}

/// Draws a scenario with default geometry and a uniform per-AP budget `power_w` (watts).
///
/// # Safety
/// `scenario` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_generate(
    num_aps: usize,
    antennas_per_ap: usize,
    num_users: usize,
    power_w: f64,
    seed: u64,
    scenario: *mut *mut MmbScenario,
) -> MmbStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let cfg = ScenarioConfig::new(num_aps, antennas_per_ap, num_users, power_w).with_seed(seed);
        *slot = Box::into_raw(Box::new(MmbScenario(generate_scenario(&cfg)?)));
        Ok(())
    })
}

/// Draws a scenario from a JSON scenario configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_generate_from_config(
    config_json: *const c_char,
    scenario: *mut *mut MmbScenario,
) -> MmbStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let cfg: ScenarioConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| fail(MmbStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(MmbScenario(generate_scenario(&cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_from_json(
    json: *const c_char,
    scenario: *mut *mut MmbScenario,
) -> MmbStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let s = Scenario::from_json(str_arg(json, "json")?)?;
        *slot = Box::into_raw(Box::new(MmbScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `scenario` as in [`mmb_scenario_generate`].
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_load(
    path: *const c_char,
    scenario: *mut *mut MmbScenario,
) -> MmbStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let s = Scenario::load(Path::new(str_arg(path, "path")?))?;
        *slot = Box::into_raw(Box::new(MmbScenario(s)));
        Ok(())
    })
}

/// Serializes a scenario; release the string with [`mmb_string_free`].
///
/// # Safety
/// `scenario` must be a live handle; `json` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_to_json(
    scenario: *const MmbScenario,
    json: *mut *mut c_char,
) -> MmbStatus {
    guard(|| {
        let s = deref(scenario, "scenario")?;
        let slot = out(json, "json")?;
        *slot = to_c_string(s.0.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_dims(
    scenario: *const MmbScenario,
    num_aps: *mut usize,
    antennas_per_ap: *mut usize,
    num_users: *mut usize,
) -> MmbStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        *out(num_aps, "num_aps")? = s.num_aps();
        *out(antennas_per_ap, "antennas_per_ap")? = s.antennas_per_ap();
        *out(num_users, "num_users")? = s.num_users();
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmb_scenario_free(scenario: *mut MmbScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// One feasibility check at `rate` (bit/s/Hz). `options` may be null for the defaults.
///
/// # Safety
/// `scenario` must be a live handle, `options` null or valid, `result` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_check_feasibility(
    scenario: *const MmbScenario,
    rate: f64,
    options: *const MmbSolverOptions,
    result: *mut MmbCheckResult,
) -> MmbStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let slot = out(result, "result")?;
        let (solver, config) = match options.as_ref() {
            Some(o) => options_into(o)?,
            None => (SolverKind::Standard, SolverConfig::default()),
        };
        let outcome = check_feasibility(s, rate, solver, &config)?;
        *slot = MmbCheckResult {
            verdict: verdict(outcome.verdict),
            final_f: outcome.final_f,
            iterations: outcome.iterations as u64,
        };
        Ok(())
    })
}

/// Bisection over `[s_min, s_max]` down to width `s_ter`. `options` may be null.
///
/// # Safety
/// `scenario` must be a live handle, `options` null or valid, `result` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_bisect(
    scenario: *const MmbScenario,
    s_min: f64,
    s_max: f64,
    s_ter: f64,
    options: *const MmbSolverOptions,
    result: *mut *mut MmbMaxMinResult,
) -> MmbStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let slot = out(result, "result")?;
        let mut cfg = BisectionConfig { s_min, s_max, s_ter, ..Default::default() };
        if let Some(o) = options.as_ref() {
            (cfg.solver, cfg.solver_config) = options_into(o)?;
        }
        cfg.validate()?;
        *slot = Box::into_raw(Box::new(MmbMaxMinResult(bisection_maxmin(s, &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; `rate` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_rate(
    result: *const MmbMaxMinResult,
    rate: *mut f64,
) -> MmbStatus {
    guard(|| {
        *out(rate, "rate")? = deref(result, "result")?.0.certified_rate;
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; `checks` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_checks(
    result: *const MmbMaxMinResult,
    checks: *mut usize,
) -> MmbStatus {
    guard(|| {
        *out(checks, "checks")? = deref(result, "result")?.0.checks_performed;
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, needed: *mut usize) -> Result<(), Failure> {
    if let Some(n) = needed.as_mut() {
        *n = src.len();
    }
    if len < src.len() {
        return Err(fail(
            MmbStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if buf.is_null() {
        return Err(fail(MmbStatus::NullPointer, "`buf` is null"));
    }
    std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
    Ok(())
}

/// Copies the K achieved rates into `buf`. `needed` (nullable) receives K.
///
/// # Safety
/// `result` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_user_rates(
    result: *const MmbMaxMinResult,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> MmbStatus {
    guard(|| copy_out(&deref(result, "result")?.0.per_user_rates, buf, len, needed))
}

/// Copies the beamformers as interleaved `re, im` pairs, user-major then AP then antenna
/// (`2 * K * M * N` doubles). `needed` (nullable) receives that count.
///
/// # Safety
/// `result` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_beamformers(
    result: *const MmbMaxMinResult,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> MmbStatus {
    guard(|| {
        let flat: Vec<f64> = deref(result, "result")?.0.beamformers.iter().flatten().copied().collect();
        copy_out(&flat, buf, len, needed)
    })
}

/// Full result as JSON; release with [`mmb_string_free`].
///
/// # Safety
/// `result` must be a live handle; `json` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_to_json(
    result: *const MmbMaxMinResult,
    json: *mut *mut c_char,
) -> MmbStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *out(json, "json")? = to_c_string(r.0.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmb_maxmin_result_free(result: *mut MmbMaxMinResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Minimum total power meeting `rate` for every user. `options` may be null for the min-power
/// defaults. Returns `QosInfeasible` when the power cap is hit.
///
/// # Safety
/// `scenario` must be a live handle, `options` null or valid, `result` writable.
#[no_mangle]
pub unsafe extern "C" fn mmb_qos_min_power(
    scenario: *const MmbScenario,
    rate: f64,
    options: *const MmbSolverOptions,
    result: *mut MmbQosResult,
) -> MmbStatus {
    guard(|| {
        let s = &deref(scenario, "scenario")?.0;
        let slot = out(result, "result")?;
        let mut cfg = QosConfig::default();
        if let Some(o) = options.as_ref() {
            (cfg.solver, cfg.solver_config) = options_into(o)?;
        }
        let r = qos_min_power(s, rate, &cfg)?;
        *slot = MmbQosResult {
            verdict: verdict(r.verdict),
            total_power: r.total_power,
            min_user_rate: r.per_user_rates.iter().copied().fold(f64::INFINITY, f64::min),
            iterations: r.iterations as u64,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        let f: Failure = Error::QosInfeasible { iteration: 3, cap: 1.0 }.into();
        assert_eq!(f.0, MmbStatus::QosInfeasible);
        let f: Failure = Error::Malformed("x".into()).into();
        assert_eq!(f.0, MmbStatus::Parse);
    }

    #[test]
    fn options_round_trip() {
        let cfg = SolverConfig { seed: 9, threads: 2, ..SolverConfig::default() };
        let (kind, back) = options_into(&options_from(&cfg, SolverKind::Randomized)).unwrap();
        assert_eq!(kind, SolverKind::Randomized);
        assert_eq!(back, cfg);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), MmbStatus::Panic);
        let msg = unsafe { CStr::from_ptr(mmb_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }
}
