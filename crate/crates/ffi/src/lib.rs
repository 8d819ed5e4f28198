//! C ABI for `amelump`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every fallible call returns an
//! [`AmelumpStatus`]; on failure [`amelump_last_error`] describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use amelump::model::ValidatedModel;
use amelump::netsim::{average_runs, MonteCarlo};
use amelump::solve::{AutoConfig, LumpSpec, Solver};
use amelump::trajectory::{trajectory_distance, Trajectory};
use amelump::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmelumpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidModel = 3,
    Capacity = 4,
    Numerical = 5,
    Io = 6,
    InvalidArgument = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Parsed and validated model.
pub struct AmelumpModel(ValidatedModel);

/// Global state fractions on a uniform time grid.
pub struct AmelumpTrajectory(Trajectory);

/// Parameters of the refinement heuristic; see [`amelump_auto_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AmelumpAutoConfig {
    pub c0: u32,
    pub r: f64,
    pub eps: f64,
    pub max_iterations: usize,
    pub approximate: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AmelumpStatus {
    match e {
        Error::Validation(_) | Error::Parse(_) | Error::Eval(_) | Error::Json(_) => AmelumpStatus::InvalidModel,
        Error::Capacity(_) => AmelumpStatus::Capacity,
        Error::Numerical { .. } | Error::IterationLimit(_) => AmelumpStatus::Numerical,
        Error::Io(_) => AmelumpStatus::Io,
        _ => AmelumpStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and panics.
fn guard<F>(f: F) -> AmelumpStatus
where
    F: FnOnce() -> Result<(), (AmelumpStatus, String)>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmelumpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AmelumpStatus::Panic
        }
    }
}

fn lib<T>(r: amelump::Result<T>) -> Result<T, (AmelumpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (AmelumpStatus, String) {
    (AmelumpStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AmelumpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (AmelumpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn model_arg<'a>(m: *const AmelumpModel) -> Result<&'a ValidatedModel, (AmelumpStatus, String)> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn traj_arg<'a>(t: *const AmelumpTrajectory) -> Result<&'a Trajectory, (AmelumpStatus, String)> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null("trajectory"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (AmelumpStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn amelump_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amelump_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a model from a JSON document.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn amelump_model_from_json(json: *const c_char, out: *mut *mut AmelumpModel) -> AmelumpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let m = lib(ValidatedModel::from_json(text))?;
        put(out, AmelumpModel(m))
    })
}

/// Loads and validates a model file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn amelump_model_load(path: *const c_char, out: *mut *mut AmelumpModel) -> AmelumpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = lib(ValidatedModel::load(path))?;
        put(out, AmelumpModel(m))
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amelump_model_free(model: *mut AmelumpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of node states, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amelump_model_num_states(model: *const AmelumpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_states())
}

/// Writes the name of state `index` into `buf` (NUL-terminated). `needed`
/// receives the required size including the terminator.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `len` bytes or be null with
/// `len == 0`; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn amelump_model_state_name(
    model: *const AmelumpModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> AmelumpStatus {
    guard(|| {
        let m = model_arg(model)?;
        let name = m
            .states()
            .names()
            .get(index)
            .ok_or_else(|| (AmelumpStatus::InvalidArgument, format!("state index {index} out of range")))?;
        let bytes = name.as_bytes();
        if !needed.is_null() {
            *needed = bytes.len() + 1;
        }
        if buf.is_null() || len < bytes.len() + 1 {
            return Err((AmelumpStatus::BufferTooSmall, format!("state name needs {} bytes", bytes.len() + 1)));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// Integrates the full system.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn amelump_solve_full(model: *const AmelumpModel, out: *mut *mut AmelumpTrajectory) -> AmelumpStatus {
    guard(|| {
        let m = model_arg(model)?;
        let sol = lib(Solver::new(m.clone()).solve_full())?;
        put(out, AmelumpTrajectory(sol.trajectory))
    })
}

/// Integrates the lumped system with `degree_intervals` degree groups and `p`
/// cells per simplex coordinate. `num_clusters` may be null.
///
/// # Safety
/// `model` must be a live handle, `out` writable, `num_clusters` null or writable.
#[no_mangle]
pub unsafe extern "C" fn amelump_solve_lumped(
    model: *const AmelumpModel,
    degree_intervals: usize,
    p: u32,
    approximate: bool,
    out: *mut *mut AmelumpTrajectory,
    num_clusters: *mut usize,
) -> AmelumpStatus {
    guard(|| {
        let m = model_arg(model)?;
        let spec = LumpSpec { degree_intervals, p, approximate, estimate: Default::default() };
        let sol = lib(Solver::new(m.clone()).solve_lumped(&spec))?;
        if !num_clusters.is_null() {
            *num_clusters = sol.num_clusters;
        }
        put(out, AmelumpTrajectory(sol.trajectory))
    })
}

#[no_mangle]
pub extern "C" fn amelump_auto_config_default() -> AmelumpAutoConfig {
    let d = AutoConfig::default();
    AmelumpAutoConfig { c0: d.c0, r: d.r, eps: d.eps, max_iterations: d.max_iterations, approximate: d.approximate }
}

/// Runs the refinement heuristic. `iterations` and `num_clusters` (of the
/// returned solution) may be null.
///
/// # Safety
/// `model` and `config` must be valid; `out` writable; the counters null or writable.
#[no_mangle]
pub unsafe extern "C" fn amelump_auto_lump(
    model: *const AmelumpModel,
    config: *const AmelumpAutoConfig,
    out: *mut *mut AmelumpTrajectory,
    iterations: *mut usize,
    num_clusters: *mut usize,
) -> AmelumpStatus {
    guard(|| {
        let m = model_arg(model)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let cfg = AutoConfig {
            c0: c.c0,
            r: c.r,
            eps: c.eps,
            max_iterations: c.max_iterations,
            approximate: c.approximate,
            ..AutoConfig::default()
        };
        let res = lib(Solver::new(m.clone()).auto_lump(&cfg))?;
        if !iterations.is_null() {
            *iterations = res.log.len();
        }
        if !num_clusters.is_null() {
            *num_clusters = res.solution.num_clusters;
        }
        put(out, AmelumpTrajectory(res.solution.trajectory))
    })
}

/// Mean of `runs` Gillespie runs on fresh `nodes`-node networks.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amelump_simulate(
    model: *const AmelumpModel,
    nodes: usize,
    runs: usize,
    seed: u64,
    out: *mut *mut AmelumpTrajectory,
) -> AmelumpStatus {
    guard(|| {
        let m = model_arg(model)?;
        let t = lib(average_runs(m, &MonteCarlo::new(nodes, runs, seed)))?;
        put(out, AmelumpTrajectory(t))
    })
}

/// # Safety
/// `traj` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_free(traj: *mut AmelumpTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of time points, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_len(traj: *const AmelumpTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Number of states per time point, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_num_states(traj: *const AmelumpTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.states().len())
}

/// Copies the time grid into `buf`, which must hold `len` time points.
///
/// # Safety
/// `traj` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_times(traj: *const AmelumpTrajectory, buf: *mut f64, len: usize) -> AmelumpStatus {
    guard(|| {
        let t = traj_arg(traj)?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < t.len() {
            return Err((AmelumpStatus::BufferTooSmall, format!("need {} doubles", t.len())));
        }
        ptr::copy_nonoverlapping(t.times().as_ptr(), buf, t.len());
        Ok(())
    })
}

/// Copies the fractions row-major (`time × state`) into `buf`.
///
/// # Safety
/// `traj` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_values(traj: *const AmelumpTrajectory, buf: *mut f64, len: usize) -> AmelumpStatus {
    guard(|| {
        let t = traj_arg(traj)?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let ns = t.states().len();
        if len < t.len() * ns {
            return Err((AmelumpStatus::BufferTooSmall, format!("need {} doubles", t.len() * ns)));
        }
        for (i, row) in t.values().iter().enumerate() {
            ptr::copy_nonoverlapping(row.as_ptr(), buf.add(i * ns), ns);
        }
        Ok(())
    })
}

/// Maximal Euclidean distance over time between two trajectories on the same grid.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_distance(
    a: *const AmelumpTrajectory,
    b: *const AmelumpTrajectory,
    out: *mut f64,
) -> AmelumpStatus {
    guard(|| {
        let d = lib(trajectory_distance(traj_arg(a)?, traj_arg(b)?))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = d;
        Ok(())
    })
}

/// Writes the trajectory as CSV to `path`.
///
/// # Safety
/// `traj` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amelump_trajectory_write_csv(traj: *const AmelumpTrajectory, path: *const c_char) -> AmelumpStatus {
    guard(|| {
        let t = traj_arg(traj)?;
        let path = str_arg(path, "path")?;
        let f = std::fs::File::create(path).map_err(|e| (AmelumpStatus::Io, format!("{path}: {e}")))?;
        lib(t.write_csv(std::io::BufWriter::new(f)))
    })
}
