//! C ABI over the degma solver.
//!
//! Results live behind opaque handles that the caller releases with the
//! matching `*_free` function. Every fallible call returns a [`DegmaStatus`];
//! the message of the most recent failure on the calling thread is available
//! through [`degma_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use degma::cli::{self, RunConfig};
use degma::radial::{solve_radial, RadialSolution};
use degma::solver::PressureSolution;
use degma::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    VerificationFailed = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Scalars of the radial profile.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DegmaRadialSummary {
    pub p: f64,
    pub rho: f64,
    pub h0: f64,
    /// Leading coefficient of `f ~ A (r - rho)^q` at the interface.
    pub leading: f64,
    pub gprime: f64,
    pub gprime_closed_form: f64,
    pub fit_slope: f64,
    pub q: f64,
}

/// Opaque radial profile.
pub struct DegmaRadial(RadialSolution);

/// Opaque 2D solution.
pub struct DegmaSolution(PressureSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> DegmaStatus {
    match e {
        Error::Config { .. } => DegmaStatus::Config,
        Error::Io(_) | Error::Json(_) => DegmaStatus::Io,
        e if cli::is_usage_error(e) => DegmaStatus::InvalidArgument,
        _ => DegmaStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (DegmaStatus, String)>) -> DegmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DegmaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DegmaStatus::Panic
        }
    }
}

fn lift(e: Error) -> (DegmaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DegmaStatus, String) {
    (DegmaStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (DegmaStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (DegmaStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn parse_config(text: &str) -> Result<RunConfig, (DegmaStatus, String)> {
    let cfg = RunConfig::from_toml(text).map_err(lift)?;
    cfg.validate().map_err(lift)?;
    Ok(cfg)
}

/// Copies `src` into `dst` (capacity `len`), reporting the required length
/// through `needed` when non-null.
unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize, needed: *mut usize) -> Result<(), (DegmaStatus, String)> {
    if !needed.is_null() {
        *needed = src.len();
    }
    if dst.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err((
            DegmaStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn degma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn degma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Integrates the radial profile with exponent `p`, interface radius `rho`
/// and constant forcing `h0` out to `outer_radius`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn degma_radial_solve(
    p: f64,
    rho: f64,
    h0: f64,
    outer_radius: f64,
    out: *mut *mut DegmaRadial,
) -> DegmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sol = solve_radial(p, rho, h0, outer_radius, 1e-12).map_err(lift)?;
        *out = Box::into_raw(Box::new(DegmaRadial(sol)));
        Ok(())
    })
}

/// Evaluates the profile and its derivative at radius `r`.
///
/// # Safety
/// `handle` must come from [`degma_radial_solve`]; `f` and `fprime` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn degma_radial_eval(
    handle: *const DegmaRadial,
    r: f64,
    f: *mut f64,
    fprime: *mut f64,
) -> DegmaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if f.is_null() || fprime.is_null() {
            return Err(null("f/fprime"));
        }
        if !(r >= 0.0) {
            return Err((DegmaStatus::InvalidArgument, format!("radius {r} is negative")));
        }
        let (v, d) = h.0.eval(r);
        *f = v;
        *fprime = d;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`degma_radial_solve`]; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn degma_radial_summary(handle: *const DegmaRadial, out: *mut DegmaRadialSummary) -> DegmaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = h.0.summary();
        *out = DegmaRadialSummary {
            p: s.p,
            rho: s.rho,
            h0: s.h0,
            leading: s.leading,
            gprime: s.gprime,
            gprime_closed_form: s.gprime_closed_form,
            fit_slope: s.fit_slope,
            q: s.q,
        };
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`degma_radial_solve`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn degma_radial_free(handle: *mut DegmaRadial) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Solves the 2D problem described by a TOML run configuration (schema
/// `degma.run/1`).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn degma_solve(config_toml: *const c_char, out: *mut *mut DegmaSolution) -> DegmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config(read_str(config_toml, "config_toml")?)?;
        let (_, sol) = cli::solve_standard(&cfg).map_err(lift)?;
        *out = Box::into_raw(Box::new(DegmaSolution(sol)));
        Ok(())
    })
}

/// Grid nodes per axis; 0 for a null handle.
///
/// # Safety
/// `handle` must be null or come from [`degma_solve`].
#[no_mangle]
pub unsafe extern "C" fn degma_solution_n(handle: *const DegmaSolution) -> usize {
    handle.as_ref().map_or(0, |h| h.0.f.n())
}

/// 1 when the sweep converged, 0 otherwise (or for a null handle).
///
/// # Safety
/// `handle` must be null or come from [`degma_solve`].
#[no_mangle]
pub unsafe extern "C" fn degma_solution_converged(handle: *const DegmaSolution) -> i32 {
    handle.as_ref().map_or(0, |h| i32::from(h.0.report.converged))
}

/// Copies the density, row-major with `x` fastest, `n * n` values.
///
/// # Safety
/// `handle` must come from [`degma_solve`]; `out` must hold `len` doubles;
/// `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn degma_solution_density(
    handle: *const DegmaSolution,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> DegmaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        copy_out(h.0.f.values(), out, len, needed)
    })
}

/// Copies the pressure, same layout as the density.
///
/// # Safety
/// As for [`degma_solution_density`].
#[no_mangle]
pub unsafe extern "C" fn degma_solution_pressure(
    handle: *const DegmaSolution,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> DegmaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        copy_out(h.0.g.values(), out, len, needed)
    })
}

/// Copies the interface polyline as interleaved `x, y` pairs.
///
/// # Safety
/// As for [`degma_solution_density`].
#[no_mangle]
pub unsafe extern "C" fn degma_solution_interface(
    handle: *const DegmaSolution,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> DegmaStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let iface = h
            .0
            .interface
            .as_ref()
            .ok_or_else(|| (DegmaStatus::Numerical, "no closed interface".to_string()))?;
        let flat: Vec<f64> = iface.vertices.iter().flat_map(|v| [v[0], v[1]]).collect();
        copy_out(&flat, out, len, needed)
    })
}

/// # Safety
/// `handle` must come from [`degma_solve`] and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn degma_solution_free(handle: *mut DegmaSolution) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Runs a batch command (`radial`, `solve`, `continuation` or `diagnose`)
/// writing artifacts into `out_dir`. `exit_code` receives the command's
/// exit code (0 success, 2 verification failure). Returns
/// `DEGMA_STATUS_VERIFICATION_FAILED` alongside exit code 2.
///
/// # Safety
/// String arguments must be NUL-terminated; `exit_code` may be null.
#[no_mangle]
pub unsafe extern "C" fn degma_run(
    command: *const c_char,
    config_toml: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut i32,
) -> DegmaStatus {
    if !exit_code.is_null() {
        *exit_code = 1;
    }
    guard(|| {
        let name = read_str(command, "command")?;
        let cmd = match name {
            "radial" => cli::Command::Radial,
            "solve" => cli::Command::Solve,
            "continuation" => cli::Command::Continuation,
            "diagnose" => cli::Command::Diagnose,
            _ => return Err((DegmaStatus::InvalidArgument, format!("unknown command `{name}`"))),
        };
        let mut cfg = parse_config(read_str(config_toml, "config_toml")?)?;
        cfg.command = Some(cmd);
        cfg.out = Some(PathBuf::from(read_str(out_dir, "out_dir")?));
        let outcome = cli::run(&cfg).map_err(lift)?;
        if !exit_code.is_null() {
            *exit_code = outcome.exit_code;
        }
        if outcome.exit_code != 0 {
            return Err((DegmaStatus::VerificationFailed, outcome.status));
        }
        Ok(())
    })
}
