//! C ABI over `advsim`. Every fallible function returns an [`AdvsimStatus`];
//! on failure the message is available from [`advsim_last_error`] on the
//! same thread until the next call. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free` function. Strings
//! returned through `char **` are released with [`advsim_string_free`].

use advsim::config::{resolve, CliConfig};
use advsim::metrics::evaluate;
use advsim::planner::learned::LearnedPlannerWeights;
use advsim::scenario::{load_scenario, save_scenario, synth_scenario, Scenario, Template};
use advsim::sim::{run_scenario, RolloutLog, Termination};
use advsim::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    InvalidArgument = 5,
    Internal = 6,
}

/// A validated scenario.
pub struct AdvsimScenario(Scenario);

/// Run configuration (the `[sim]` section plus prior and weight options).
pub struct AdvsimConfig(CliConfig);

/// The log of one simulated rollout.
pub struct AdvsimRollout(RolloutLog);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(AdvsimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse(_) | Error::FeatureVersion(_) => AdvsimStatus::Parse,
            Error::Validation(_) | Error::Dimension { .. } => AdvsimStatus::Validation,
            Error::Config(_) | Error::InvalidInput(_) | Error::Empty(_) => {
                AdvsimStatus::InvalidArgument
            }
            Error::Io { .. } => AdvsimStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AdvsimStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdvsimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvsimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            AdvsimStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(AdvsimStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|e| Failure(AdvsimStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn advsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn advsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn advsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a scenario JSON document of `len` bytes.
///
/// # Safety
/// `json` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_scenario_from_json(
    json: *const u8,
    len: usize,
    out: *mut *mut AdvsimScenario,
) -> AdvsimStatus {
    guard(|| {
        let bytes = bytes_arg(json, len, "json")?;
        put(out, AdvsimScenario(load_scenario(bytes)?))
    })
}

/// Synthesizes a scenario from a template name (`straight-following`,
/// `adjacent-lane`, `intersection-crossing`, `oncoming`).
///
/// # Safety
/// `template_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_scenario_synth(
    template_name: *const c_char,
    seed: u64,
    out: *mut *mut AdvsimScenario,
) -> AdvsimStatus {
    guard(|| {
        let name = str_arg(template_name, "template_name")?;
        let t = Template::from_name(name).ok_or_else(|| {
            Failure(
                AdvsimStatus::InvalidArgument,
                format!("unknown template '{name}'"),
            )
        })?;
        put(out, AdvsimScenario(synth_scenario(seed, t)))
    })
}

/// Canonical JSON of the scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_scenario_to_json(
    scenario: *const AdvsimScenario,
    out: *mut *mut c_char,
) -> AdvsimStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        let text = String::from_utf8(save_scenario(&s.0))
            .map_err(|e| Failure(AdvsimStatus::Internal, e.to_string()))?;
        put_string(out, text)
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advsim_scenario_free(scenario: *mut AdvsimScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Builds a configuration from TOML text, which may be null for defaults.
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_config_new(
    toml: *const c_char,
    out: *mut *mut AdvsimConfig,
) -> AdvsimStatus {
    guard(|| {
        let text = if toml.is_null() {
            None
        } else {
            Some(str_arg(toml, "toml")?)
        };
        put(out, AdvsimConfig(resolve(text, &[], &[])?))
    })
}

/// Applies a `key=value` override such as `sim.seed=3`.
///
/// # Safety
/// `config` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn advsim_config_set(
    config: *mut AdvsimConfig,
    assignment: *const c_char,
) -> AdvsimStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let set = str_arg(assignment, "assignment")?;
        let weights = cfg.0.sim.learned_weights.take();
        let mut next = resolve(Some(&cfg.0.to_toml()), &[], &[set.to_string()]);
        if let Ok(n) = next.as_mut() {
            n.sim.learned_weights = weights;
            cfg.0 = next?;
        } else {
            cfg.0.sim.learned_weights = weights;
            next?;
        }
        Ok(())
    })
}

/// Loads learned-planner weights from the JSON weight-file format.
///
/// # Safety
/// `config` must be a live handle; `json` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn advsim_config_load_weights(
    config: *mut AdvsimConfig,
    json: *const c_char,
) -> AdvsimStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let w = LearnedPlannerWeights::from_json(str_arg(json, "json")?)?;
        cfg.0.sim.learned_weights = Some(Arc::new(w));
        Ok(())
    })
}

/// The configuration as TOML.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_config_to_toml(
    config: *const AdvsimConfig,
    out: *mut *mut c_char,
) -> AdvsimStatus {
    guard(|| put_string(out, ref_arg(config, "config")?.0.to_toml()))
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advsim_config_free(config: *mut AdvsimConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Simulates one scenario with the configuration's `[sim]` settings.
///
/// # Safety
/// `scenario` and `config` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_run(
    scenario: *const AdvsimScenario,
    config: *const AdvsimConfig,
    out: *mut *mut AdvsimRollout,
) -> AdvsimStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        let cfg = ref_arg(config, "config")?;
        cfg.0.sim.validate()?;
        put(out, AdvsimRollout(run_scenario(&s.0, &cfg.0.sim)?))
    })
}

/// Writes 1 to `collided` if the rollout ended in an AV collision, else 0.
///
/// # Safety
/// `rollout` must be a live handle; `collided` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_rollout_collided(
    rollout: *const AdvsimRollout,
    collided: *mut i32,
) -> AdvsimStatus {
    guard(|| {
        let r = ref_arg(rollout, "rollout")?;
        let out = collided.as_mut().ok_or_else(|| null("collided"))?;
        *out = i32::from(r.0.termination == Termination::Collision);
        Ok(())
    })
}

/// The rollout log in its JSON-lines form.
///
/// # Safety
/// `rollout` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_rollout_to_jsonl(
    rollout: *const AdvsimRollout,
    out: *mut *mut c_char,
) -> AdvsimStatus {
    guard(|| put_string(out, ref_arg(rollout, "rollout")?.0.to_jsonl()))
}

/// # Safety
/// `rollout` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn advsim_rollout_free(rollout: *mut AdvsimRollout) {
    if !rollout.is_null() {
        drop(Box::from_raw(rollout));
    }
}

/// Metrics report JSON over `n` rollouts and their scenarios.
///
/// # Safety
/// `rollouts` and `scenarios` must each point to `n` live handles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn advsim_evaluate(
    rollouts: *const *const AdvsimRollout,
    scenarios: *const *const AdvsimScenario,
    n: usize,
    out: *mut *mut c_char,
) -> AdvsimStatus {
    guard(|| {
        if rollouts.is_null() || scenarios.is_null() {
            return Err(null("array"));
        }
        let mut logs = Vec::with_capacity(n);
        let mut scens = Vec::with_capacity(n);
        for i in 0..n {
            logs.push(ref_arg(*rollouts.add(i), "rollout")?.0.clone());
            scens.push(&ref_arg(*scenarios.add(i), "scenario")?.0);
        }
        put_string(out, evaluate(&logs, &scens)?.to_json())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = advsim_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    unsafe fn take(s: *mut c_char) -> String {
        let text = CStr::from_ptr(s).to_string_lossy().into_owned();
        advsim_string_free(s);
        text
    }

    #[test]
    fn synth_run_evaluate_round_trip() {
        unsafe {
            let mut scen = ptr::null_mut();
            assert_eq!(
                advsim_scenario_synth(c"adjacent-lane".as_ptr(), 0, &mut scen),
                AdvsimStatus::Ok
            );
            assert!(advsim_last_error().is_null());

            let mut json = ptr::null_mut();
            assert_eq!(advsim_scenario_to_json(scen, &mut json), AdvsimStatus::Ok);
            let text = take(json);
            let mut again = ptr::null_mut();
            assert_eq!(
                advsim_scenario_from_json(text.as_ptr(), text.len(), &mut again),
                AdvsimStatus::Ok
            );

            let mut cfg = ptr::null_mut();
            assert_eq!(advsim_config_new(ptr::null(), &mut cfg), AdvsimStatus::Ok);
            assert_eq!(
                advsim_config_set(cfg, c"sim.seed=3".as_ptr()),
                AdvsimStatus::Ok
            );
            let mut toml = ptr::null_mut();
            assert_eq!(advsim_config_to_toml(cfg, &mut toml), AdvsimStatus::Ok);
            assert!(take(toml).contains("seed = 3"));

            let mut r = ptr::null_mut();
            assert_eq!(advsim_run(again, cfg, &mut r), AdvsimStatus::Ok);
            let mut collided = -1;
            assert_eq!(advsim_rollout_collided(r, &mut collided), AdvsimStatus::Ok);
            assert!(collided == 0 || collided == 1);
            let mut jsonl = ptr::null_mut();
            assert_eq!(advsim_rollout_to_jsonl(r, &mut jsonl), AdvsimStatus::Ok);
            let log = RolloutLog::from_jsonl(&take(jsonl)).unwrap();
            assert_eq!(log, (*r).0);

            let rs = [r as *const AdvsimRollout];
            let ss = [again as *const AdvsimScenario];
            let mut report = ptr::null_mut();
            assert_eq!(
                advsim_evaluate(rs.as_ptr(), ss.as_ptr(), 1, &mut report),
                AdvsimStatus::Ok
            );
            let v: serde_json::Value = serde_json::from_str(&take(report)).unwrap();
            assert_eq!(v["n_scenarios"], 1);
            assert_eq!(v["collision_rate"], 100.0 * collided as f64);

            advsim_rollout_free(r);
            advsim_config_free(cfg);
            advsim_scenario_free(again);
            advsim_scenario_free(scen);
        }
    }

    #[test]
    fn error_codes_and_messages() {
        unsafe {
            let mut scen = ptr::null_mut();
            assert_eq!(
                advsim_scenario_synth(ptr::null(), 0, &mut scen),
                AdvsimStatus::NullPointer
            );
            assert_eq!(
                advsim_scenario_synth(c"nowhere".as_ptr(), 0, &mut scen),
                AdvsimStatus::InvalidArgument
            );
            assert!(last_error().contains("nowhere"));
            let bad = [0x66u8, 0xff, 0];
            assert_eq!(
                advsim_scenario_synth(bad.as_ptr().cast(), 0, &mut scen),
                AdvsimStatus::InvalidUtf8
            );
            let junk = b"{not json";
            assert_eq!(
                advsim_scenario_from_json(junk.as_ptr(), junk.len(), &mut scen),
                AdvsimStatus::Parse
            );
            assert!(scen.is_null());

            let mut ok = ptr::null_mut();
            assert_eq!(
                advsim_scenario_synth(c"oncoming".as_ptr(), 1, &mut ok),
                AdvsimStatus::Ok
            );
            let mut json = ptr::null_mut();
            advsim_scenario_to_json(ok, &mut json);
            let mut v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
            v["dt"] = serde_json::json!(-1.0);
            let text = v.to_string();
            assert_eq!(
                advsim_scenario_from_json(text.as_ptr(), text.len(), &mut scen),
                AdvsimStatus::Validation
            );

            let mut cfg = ptr::null_mut();
            assert_eq!(
                advsim_config_new(c"[sim]\nwarp = 1\n".as_ptr(), &mut cfg),
                AdvsimStatus::InvalidArgument
            );
            assert_eq!(advsim_config_new(ptr::null(), &mut cfg), AdvsimStatus::Ok);
            assert_eq!(
                advsim_config_set(cfg, c"sim.replan_hz=3".as_ptr()),
                AdvsimStatus::Ok
            );
            let mut r = ptr::null_mut();
            assert_eq!(advsim_run(ok, cfg, &mut r), AdvsimStatus::InvalidArgument);
            assert!(r.is_null());
            assert_eq!(
                advsim_config_set(cfg, c"sim.ov_planner=\"learned\"".as_ptr()),
                AdvsimStatus::Ok
            );
            assert_eq!(
                advsim_config_load_weights(cfg, c"{}".as_ptr()),
                AdvsimStatus::Parse
            );
            assert_eq!(advsim_run(ok, cfg, &mut r), AdvsimStatus::InvalidArgument);
            assert!(last_error().contains("weight"));
            assert_eq!(
                advsim_run(ptr::null(), cfg, &mut r),
                AdvsimStatus::NullPointer
            );

            advsim_config_free(cfg);
            advsim_scenario_free(ok);
            advsim_scenario_free(ptr::null_mut());
            advsim_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn learned_weights_survive_overrides() {
        let w = LearnedPlannerWeights::zeros(&[8], 60).to_json();
        let w = CString::new(w).unwrap();
        unsafe {
            let mut cfg = ptr::null_mut();
            advsim_config_new(ptr::null(), &mut cfg);
            assert_eq!(
                advsim_config_load_weights(cfg, w.as_ptr()),
                AdvsimStatus::Ok
            );
            assert_eq!(
                advsim_config_set(cfg, c"sim.ov_planner=\"learned\"".as_ptr()),
                AdvsimStatus::Ok
            );
            assert_eq!(
                advsim_config_set(cfg, c"sim.nope=1".as_ptr()),
                AdvsimStatus::InvalidArgument
            );
            assert!((*cfg).0.sim.learned_weights.is_some());
            let mut scen = ptr::null_mut();
            advsim_scenario_synth(c"straight-following".as_ptr(), 0, &mut scen);
            let mut r = ptr::null_mut();
            assert_eq!(
                advsim_run(scen, cfg, &mut r),
                AdvsimStatus::Ok,
                "{}",
                last_error()
            );
            advsim_rollout_free(r);
            advsim_scenario_free(scen);
            advsim_config_free(cfg);
        }
    }

    #[test]
    fn version_is_package_version() {
        let v = unsafe { CStr::from_ptr(advsim_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
