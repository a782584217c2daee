//! C ABI over the `fracdiff` solvers.
//!
//! Every fallible call returns an [`FdStatus`]; the message of the last failure on the
//! calling thread is available through [`fd_last_error_message`]. Handles are opaque and
//! owned by the caller until passed to the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use fracdiff::config::{ExperimentConfig, Mode};
use fracdiff::forward::{evaluate_at_point, solve_forward, PicardReport};
use fracdiff::fractional_ops::GridFunction;
use fracdiff::harness::{build_spec, prepare_inverse, run_forward, run_inverse, run_mlcheck, run_refine};
use fracdiff::inverse::{recover, RecoveryReport};
use fracdiff::mittag_leffler::{mittag_leffler, ml_kernel};
use fracdiff::spectral::{ModalTrajectory, SpectralBasis};
use fracdiff::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NotConverged = 4,
    Resonance = 5,
    Observation = 6,
    BufferTooSmall = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdMode {
    Forward = 0,
    Inverse = 1,
    Refine = 2,
    Mlcheck = 3,
}

impl From<FdMode> for Mode {
    fn from(m: FdMode) -> Self {
        match m {
            FdMode::Forward => Mode::Forward,
            FdMode::Inverse => Mode::Inverse,
            FdMode::Refine => Mode::Refine,
            FdMode::Mlcheck => Mode::Mlcheck,
        }
    }
}

/// Parsed experiment configuration.
pub struct FdConfig {
    inner: ExperimentConfig,
}

/// Converged forward solution.
pub struct FdForward {
    u: ModalTrajectory,
    basis: SpectralBasis,
    report: PicardReport,
}

/// Recovered coefficient.
pub struct FdRecovery {
    k: GridFunction,
    report: RecoveryReport,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> FdStatus {
    match e {
        Error::Config { .. } => FdStatus::Config,
        Error::Io(_) => FdStatus::Io,
        Error::NonConvergent { .. }
        | Error::NotConverged(_)
        | Error::ShootingDiverged { .. }
        | Error::RecoveryNotConverged(_) => FdStatus::NotConverged,
        Error::ResonanceDetected(_) | Error::ResonantScalar { .. } => FdStatus::Resonance,
        Error::ObservationTooSmall { .. } | Error::IncompatibleObservation { .. } | Error::DatumCrossesZero => {
            FdStatus::Observation
        }
        _ => FdStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> FdStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn guard(f: impl FnOnce() -> FdStatus) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == FdStatus::Ok {
                set_error("");
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FdStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, FdStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(FdStatus::NullPointer);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not UTF-8"));
            Err(FdStatus::InvalidArgument)
        }
    }
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> FdStatus {
    if buf.is_null() {
        set_error("output buffer is null");
        return FdStatus::NullPointer;
    }
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return FdStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    FdStatus::Ok
}

/// Length in bytes of the last error message on this thread, without the terminator.
#[no_mangle]
pub extern "C" fn fd_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copy the last error message into `buf` as a NUL-terminated string, truncating to
/// `cap - 1` bytes. Returns the number of bytes written before the terminator.
///
/// # Safety
/// `buf` must be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fd_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(cap - 1);
        ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// `E_{alpha,sigma}(z)` for real `z`.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn fd_mittag_leffler(alpha: f64, sigma: f64, z: f64, out: *mut f64) -> FdStatus {
    if out.is_null() {
        set_error("out is null");
        return FdStatus::NullPointer;
    }
    guard(|| match mittag_leffler(alpha, sigma, z) {
        Ok(v) => {
            *out = v;
            FdStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// `t^(alpha-1) E_{alpha,alpha}(-lambda t^alpha)` for `t > 0`.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn fd_ml_kernel(alpha: f64, lambda: f64, t: f64, out: *mut f64) -> FdStatus {
    if out.is_null() {
        set_error("out is null");
        return FdStatus::NullPointer;
    }
    guard(|| match ml_kernel(alpha, lambda, t) {
        Ok(v) => {
            *out = v;
            FdStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Load a TOML configuration for `mode`. Relative paths inside it resolve against
/// the file's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_config_load(path: *const c_char, mode: FdMode, out: *mut *mut FdConfig) -> FdStatus {
    if out.is_null() {
        set_error("out is null");
        return FdStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| match ExperimentConfig::load(&path, mode.into()) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(FdConfig { inner }));
            FdStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`fd_config_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fd_config_free(cfg: *mut FdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the configured mode and write its artifacts to the configured output directory.
/// `exit_status` receives 0, or 3 when a solver stopped without converging and a
/// partial report was written.
///
/// # Safety
/// `cfg` must be a live handle; `exit_status` must be null or point to a writable `int`.
#[no_mangle]
pub unsafe extern "C" fn fd_run(cfg: *const FdConfig, exit_status: *mut i32) -> FdStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("cfg is null");
        return FdStatus::NullPointer;
    };
    guard(|| {
        let c = &cfg.inner;
        let res = match c.mode {
            Mode::Forward => run_forward(c),
            Mode::Inverse => run_inverse(c, None),
            Mode::Refine => run_refine(c),
            Mode::Mlcheck => run_mlcheck(c),
        };
        match res {
            Ok(art) => {
                if !exit_status.is_null() {
                    *exit_status = art.exit_status;
                }
                FdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Solve the forward problem of a forward-mode configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_solve(cfg: *const FdConfig, out: *mut *mut FdForward) -> FdStatus {
    if out.is_null() {
        set_error("out is null");
        return FdStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let Some(cfg) = cfg.as_ref() else {
        set_error("cfg is null");
        return FdStatus::NullPointer;
    };
    guard(|| {
        let c = &cfg.inner;
        let spec = match build_spec(c, &c.k, "k") {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match solve_forward(&spec, c.tol, c.max_iter) {
            Ok((u, report)) => {
                *out = Box::into_raw(Box::new(FdForward {
                    u,
                    basis: spec.basis,
                    report,
                }));
                FdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `sol` must be null or a handle from [`fd_forward_solve`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_free(sol: *mut FdForward) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of time nodes, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_nodes(sol: *const FdForward) -> usize {
    sol.as_ref().map_or(0, |s| s.u.grid().len())
}

/// Number of retained modes, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_modes(sol: *const FdForward) -> usize {
    sol.as_ref().map_or(0, |s| s.u.modes())
}

/// Picard iterations used, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_iterations(sol: *const FdForward) -> usize {
    sol.as_ref().map_or(0, |s| s.report.iterations)
}

/// `||u(T) - kappa u(0) - phi||` of the solution, NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_nonlocal_residual(sol: *const FdForward) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.report.nonlocal_residual)
}

/// Copy the time nodes into `buf`.
///
/// # Safety
/// `sol` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_times(sol: *const FdForward, buf: *mut f64, len: usize) -> FdStatus {
    let Some(s) = sol.as_ref() else {
        set_error("sol is null");
        return FdStatus::NullPointer;
    };
    copy_out(&s.u.grid().nodes(), buf, len)
}

/// Copy the amplitude of mode `m` (1-based) at every node into `buf`.
///
/// # Safety
/// `sol` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_mode(sol: *const FdForward, m: usize, buf: *mut f64, len: usize) -> FdStatus {
    let Some(s) = sol.as_ref() else {
        set_error("sol is null");
        return FdStatus::NullPointer;
    };
    if m == 0 || m > s.u.modes() {
        set_error(format!("mode {m} outside 1..={}", s.u.modes()));
        return FdStatus::InvalidArgument;
    }
    copy_out(s.u.row(m - 1), buf, len)
}

/// Copy `u(t_i, x)` at every node into `buf`.
///
/// # Safety
/// `sol` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_forward_at_point(sol: *const FdForward, x: f64, buf: *mut f64, len: usize) -> FdStatus {
    let Some(s) = sol.as_ref() else {
        set_error("sol is null");
        return FdStatus::NullPointer;
    };
    guard(|| match evaluate_at_point(&s.u, &s.basis, x) {
        Ok(trace) => copy_out(trace.values(), buf, len),
        Err(e) => fail(e),
    })
}

/// Recover `k(t)` for an inverse-mode configuration. `observation` is a CSV of `t,h`
/// rows on the configured grid, or null to synthesize the trace from `k_true`.
///
/// # Safety
/// `cfg` must be a live handle; `observation` must be null or a NUL-terminated string;
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_inverse_recover(
    cfg: *const FdConfig,
    observation: *const c_char,
    out: *mut *mut FdRecovery,
) -> FdStatus {
    if out.is_null() {
        set_error("out is null");
        return FdStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let Some(cfg) = cfg.as_ref() else {
        set_error("cfg is null");
        return FdStatus::NullPointer;
    };
    let obs_path = if observation.is_null() {
        None
    } else {
        match path_arg(observation, "observation") {
            Ok(p) => Some(p),
            Err(s) => return s,
        }
    };
    guard(|| {
        let inv = match prepare_inverse(&cfg.inner, obs_path.as_deref().map(Path::new)) {
            Ok((inv, _)) => inv,
            Err(e) => return fail(e),
        };
        match recover(&inv) {
            Ok((k, _, report)) => {
                *out = Box::into_raw(Box::new(FdRecovery { k, report }));
                FdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `rec` must be null or a handle from [`fd_inverse_recover`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_free(rec: *mut FdRecovery) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Number of time nodes, or 0 for a null handle.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_nodes(rec: *const FdRecovery) -> usize {
    rec.as_ref().map_or(0, |r| r.k.grid().len())
}

/// Outer iterations used, or 0 for a null handle.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_iterations(rec: *const FdRecovery) -> usize {
    rec.as_ref().map_or(0, |r| r.report.outer_iterations)
}

/// `sup_t |u(t, x0) - h(t)|`, NaN for a null handle.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_data_residual(rec: *const FdRecovery) -> f64 {
    rec.as_ref().map_or(f64::NAN, |r| r.report.data_residual)
}

/// Copy the time nodes into `buf`.
///
/// # Safety
/// `rec` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_times(rec: *const FdRecovery, buf: *mut f64, len: usize) -> FdStatus {
    let Some(r) = rec.as_ref() else {
        set_error("rec is null");
        return FdStatus::NullPointer;
    };
    copy_out(&r.k.grid().nodes(), buf, len)
}

/// Copy the recovered coefficient into `buf`.
///
/// # Safety
/// `rec` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_recovery_k(rec: *const FdRecovery, buf: *mut f64, len: usize) -> FdStatus {
    let Some(r) = rec.as_ref() else {
        set_error("rec is null");
        return FdStatus::NullPointer;
    };
    copy_out(r.k.values(), buf, len)
}
