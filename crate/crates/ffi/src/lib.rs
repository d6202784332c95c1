//! C ABI for the gemeit simulator.
//!
//! Configurations and runs are opaque heap handles created by `*_load`,
//! `*_parse` or `gemeit_run` and released with the matching `*_free`. Every
//! fallible call returns a [`GemeitStatus`]; on failure the message is
//! available from [`gemeit_last_error`] on the same thread. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gemeit::config::{load_config, parse_config, ExperimentConfig};
use gemeit::experiment::{run, run_sweep, write_run_artifacts, write_sweep_artifacts, RunOutcome};
use gemeit::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemeitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Configuration syntax or validation error.
    Config = 3,
    /// A parameter, grid, schedule or pulse was rejected.
    InvalidParameter = 4,
    /// The integrator failed (step underflow or non-finite state).
    Solver = 5,
    /// An analysis stage (fit, fringe, filter design) failed.
    Analysis = 6,
    Io = 7,
    /// The requested quantity was not computed for this run.
    Unavailable = 8,
    BufferTooSmall = 9,
    /// A Rust panic was caught at the boundary.
    Internal = 10,
}

/// Parsed, validated experiment configuration.
pub struct GemeitConfig(ExperimentConfig);

/// Completed simulation with its analysis summary.
pub struct GemeitRun(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn classify(e: &Error) -> GemeitStatus {
    match e {
        Error::Run { source, .. } => classify(source),
        Error::Config { .. } => GemeitStatus::Config,
        Error::InvalidGrid(_)
        | Error::InvalidParameter { .. }
        | Error::ZeroDensityIntegral
        | Error::OutsideSchedule { .. }
        | Error::InvalidSchedule(_)
        | Error::SpanTooSmall { .. }
        | Error::Aliasing { .. }
        | Error::ImageLeakage { .. } => GemeitStatus::InvalidParameter,
        Error::StepUnderflow { .. } | Error::NonFinite { .. } => GemeitStatus::Solver,
        Error::ZeroEnergy | Error::NoSideband | Error::FilterDesign(_) | Error::FitFailed(_) => GemeitStatus::Analysis,
        Error::TraceFormat(_) | Error::Artifact(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => GemeitStatus::Io,
    }
}

struct Failure(GemeitStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(classify(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GemeitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GemeitStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error: panic caught at the C boundary");
            GemeitStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GemeitStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GemeitStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gemeit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread ("" after a success).
/// Valid until the next gemeit call on the same thread.
#[no_mangle]
pub extern "C" fn gemeit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a configuration file (includes resolve relative to it).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_load(path: *const c_char, out: *mut *mut GemeitConfig) -> GemeitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = load_config(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(GemeitConfig(cfg)));
        Ok(())
    })
}

/// Parses configuration text; relative includes resolve against the working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_parse(text: *const c_char, out: *mut *mut GemeitConfig) -> GemeitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = parse_config(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(GemeitConfig(cfg)));
        Ok(())
    })
}

/// Overrides one numeric parameter by dotted name, e.g. "pulse.separation".
/// The configuration is unchanged if the new value fails validation.
///
/// # Safety
/// `cfg` must come from this library; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_set(cfg: *mut GemeitConfig, name: *const c_char, value: f64) -> GemeitStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        cfg.0 = cfg.0.with_override(str_arg(name, "name")?, value)?;
        Ok(())
    })
}

/// Sets the seed for detector noise and shot phases.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_set_seed(cfg: *mut GemeitConfig, seed: u64) -> GemeitStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

/// Sets the directory sweeps write into and disables or enables plots.
///
/// # Safety
/// `cfg` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_set_output(
    cfg: *mut GemeitConfig,
    dir: *const c_char,
    plots: bool,
) -> GemeitStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        cfg.0.output_dir = str_arg(dir, "dir")?.into();
        cfg.0.plots = plots;
        Ok(())
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gemeit_config_free(cfg: *mut GemeitConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one simulation and its analyses.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run(cfg: *const GemeitConfig, out: *mut *mut GemeitRun) -> GemeitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let outcome = run(&ref_arg(cfg, "cfg")?.0)?;
        *out = Box::into_raw(Box::new(GemeitRun(outcome)));
        Ok(())
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_free(run: *mut GemeitRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Output energy over input energy.
///
/// # Safety
/// `run` must come from this library; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_efficiency(run: *const GemeitRun, value: *mut f64) -> GemeitStatus {
    guard(|| {
        *out_arg(value, "value")? = ref_arg(run, "run")?.0.summary.efficiency;
        Ok(())
    })
}

/// Fourier-transform fidelity; `Unavailable` if the analysis was off.
///
/// # Safety
/// `run` must come from this library; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_fidelity(run: *const GemeitRun, value: *mut f64) -> GemeitStatus {
    guard(|| {
        let value = out_arg(value, "value")?;
        match &ref_arg(run, "run")?.0.summary.fidelity {
            Some(f) => {
                *value = f.fidelity;
                Ok(())
            }
            None => Err(Failure(GemeitStatus::Unavailable, "fidelity was not computed".into())),
        }
    })
}

/// Whether every acceptance check of the run passed.
///
/// # Safety
/// `run` must come from this library; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_passed(run: *const GemeitRun, passed: *mut bool) -> GemeitStatus {
    guard(|| {
        *out_arg(passed, "passed")? = ref_arg(run, "run")?.0.summary.passed();
        Ok(())
    })
}

/// Sample count, start time and spacing (us) of the output envelope.
///
/// # Safety
/// `run` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_output_info(
    run: *const GemeitRun,
    len: *mut usize,
    t0: *mut f64,
    dt: *mut f64,
) -> GemeitStatus {
    guard(|| {
        let env = &ref_arg(run, "run")?.0.output;
        *out_arg(len, "len")? = env.len();
        *out_arg(t0, "t0")? = env.t0;
        *out_arg(dt, "dt")? = env.dt;
        Ok(())
    })
}

/// Copies the output envelope into `re` and `im`, each of capacity `cap`.
///
/// # Safety
/// `re` and `im` must each point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_output(
    run: *const GemeitRun,
    re: *mut f64,
    im: *mut f64,
    cap: usize,
) -> GemeitStatus {
    guard(|| {
        let env = &ref_arg(run, "run")?.0.output;
        if re.is_null() || im.is_null() {
            return Err(null("re/im"));
        }
        if cap < env.len() {
            return Err(Failure(
                GemeitStatus::BufferTooSmall,
                format!("need {} samples, buffer holds {cap}", env.len()),
            ));
        }
        let re = std::slice::from_raw_parts_mut(re, env.len());
        let im = std::slice::from_raw_parts_mut(im, env.len());
        for (k, v) in env.samples.iter().enumerate() {
            re[k] = v.re;
            im[k] = v.im;
        }
        Ok(())
    })
}

/// Run summary as JSON; release with `gemeit_string_free`.
///
/// # Safety
/// `run` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_summary_json(run: *const GemeitRun, out: *mut *mut c_char) -> GemeitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string_pretty(&ref_arg(run, "run")?.0.summary).map_err(Error::from)?;
        *out = owned_string(json);
        Ok(())
    })
}

/// Writes the run's CSV, JSON and plot artifacts into `dir`.
///
/// # Safety
/// `run` and `cfg` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gemeit_run_write_artifacts(
    run: *const GemeitRun,
    cfg: *const GemeitConfig,
    dir: *const c_char,
) -> GemeitStatus {
    guard(|| {
        let dir = Path::new(str_arg(dir, "dir")?);
        write_run_artifacts(&ref_arg(run, "run")?.0, &ref_arg(cfg, "cfg")?.0, dir)?;
        Ok(())
    })
}

/// Runs the configuration's sweep on `jobs` threads (0 = all cores), writes
/// its artifacts to the configured output directory and returns the sweep
/// summary as JSON (release with `gemeit_string_free`).
///
/// # Safety
/// `cfg` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gemeit_sweep(
    cfg: *const GemeitConfig,
    jobs: usize,
    json: *mut *mut c_char,
    passed: *mut bool,
) -> GemeitStatus {
    guard(|| {
        let json = out_arg(json, "json")?;
        *json = ptr::null_mut();
        let passed = out_arg(passed, "passed")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        if cfg.sweep.is_none() {
            return Err(Failure(
                GemeitStatus::Config,
                "configuration has no [sweep] section".into(),
            ));
        }
        let jobs = if jobs == 0 { all_cores() } else { jobs };
        let (summary, _) = run_sweep(cfg, jobs)?;
        write_sweep_artifacts(&summary, cfg)?;
        *passed = summary.passed();
        *json = owned_string(serde_json::to_string_pretty(&summary).map_err(Error::from)?);
        Ok(())
    })
}

fn all_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gemeit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
