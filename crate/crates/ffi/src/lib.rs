//! C ABI over the discretized problem: build from a TOML config, evaluate the
//! operator, compute half-eigenvalues, the threshold and solution censuses.
//!
//! Every call returns an [`HjbStatus`]; on failure the message is available
//! from [`hjb_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hjblab::ambrosetti_prodi::{ApProblem, VerdictStatus};
use hjblab::error::HjbError;
use hjblab::harness::config::{ExperimentConfig, Setup};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HjbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    LengthMismatch = 4,
    Numerical = 5,
    Assertion = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HjbVerdict {
    Solvable = 0,
    NoSolution = 1,
    Inconclusive = 2,
}

/// Opaque problem handle.
pub struct HjbProblem {
    setup: Setup,
    problem: ApProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &HjbError) -> HjbStatus {
    match e {
        HjbError::Config(_)
        | HjbError::InvalidOperator(_)
        | HjbError::InvalidGrid(_)
        | HjbError::Coefficient(_)
        | HjbError::Unsupported(_) => HjbStatus::Config,
        HjbError::DimensionMismatch { .. } | HjbError::GridMismatch => HjbStatus::LengthMismatch,
        HjbError::Assertion { .. } | HjbError::Certificate { .. } => HjbStatus::Assertion,
        _ => HjbStatus::Numerical,
    }
}

struct Fail(HjbStatus, String);

impl From<HjbError> for Fail {
    fn from(e: HjbError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HjbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HjbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HjbStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(HjbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(p: *const HjbProblem) -> Result<&'a HjbProblem, Fail> {
    p.as_ref().ok_or_else(|| null("problem"))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn slice_out<'a>(out: *mut f64, len: usize, want: usize) -> Result<&'a mut [f64], Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != want {
        return Err(Fail(HjbStatus::LengthMismatch, format!("buffer holds {len} values, need {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(out, len))
}

/// Message of the last failing call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn hjb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hjb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a problem from config text with `[operator]`, `[domain]` and
/// optional `h`, `[solver]`, `[eigen]` and `[ap]` entries. `kind` is ignored.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_new(config: *const c_char, out: *mut *mut HjbProblem) -> HjbStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|e| Fail(HjbStatus::InvalidUtf8, e.to_string()))?;
        let cfg = ExperimentConfig::parse(text, &["kind=eigen".to_string()])?;
        let setup = cfg.build()?;
        let problem = setup.problem(&cfg)?;
        out.write(Box::into_raw(Box::new(HjbProblem { setup, problem })));
        Ok(())
    })
}

/// Releases a handle; null is accepted.
///
/// # Safety
/// `p` must come from [`hjb_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_free(p: *mut HjbProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of interior nodes, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_len(p: *const HjbProblem) -> usize {
    p.as_ref().map_or(0, |p| p.setup.grid.len())
}

/// Spatial dimension, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_dim(p: *const HjbProblem) -> usize {
    p.as_ref().map_or(0, |p| p.setup.grid.dim())
}

/// Node coordinates, row-major with `len == nodes * dim`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_nodes(p: *const HjbProblem, out: *mut f64, len: usize) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        let g = &p.setup.grid;
        let buf = slice_out(out, len, g.len() * g.dim())?;
        for (k, chunk) in buf.chunks_mut(g.dim()).enumerate() {
            chunk.copy_from_slice(&g.position(k));
        }
        Ok(())
    })
}

/// Half-eigenvalues of the asymptotic operator.
///
/// # Safety
/// Both outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_eigenvalues(
    p: *const HjbProblem,
    lambda_plus: *mut f64,
    lambda_minus: *mut f64,
) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        write_out(lambda_plus, p.problem.lambda_plus)?;
        write_out(lambda_minus, p.problem.lambda_minus)
    })
}

/// Positive principal eigenfunction; the forcing is `h + t·phi`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_phi(p: *const HjbProblem, out: *mut f64, len: usize) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        let phi = &p.problem.phi.values;
        slice_out(out, len, phi.len())?.copy_from_slice(phi);
        Ok(())
    })
}

/// Evaluates the discrete operator at every node.
///
/// # Safety
/// `u` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_apply(
    p: *const HjbProblem,
    u: *const f64,
    out: *mut f64,
    len: usize,
) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        if u.is_null() {
            return Err(null("input buffer"));
        }
        let n = p.setup.grid.len();
        let buf = slice_out(out, len, n)?;
        let u = std::slice::from_raw_parts(u, len);
        buf.copy_from_slice(&p.problem.d.apply_raw(u));
        Ok(())
    })
}

/// Decides whether the problem with forcing `h + t·φ` has a solution.
///
/// # Safety
/// `verdict` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_solvable(p: *const HjbProblem, t: f64, verdict: *mut HjbVerdict) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        let v = p.problem.solvable(t)?;
        let v = match v.status {
            VerdictStatus::Solvable => HjbVerdict::Solvable,
            VerdictStatus::NoSolution => HjbVerdict::NoSolution,
            VerdictStatus::Inconclusive => HjbVerdict::Inconclusive,
        };
        write_out(verdict, v)
    })
}

/// Solvability threshold located to within `tol`.
///
/// # Safety
/// `t_star` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_tstar(p: *const HjbProblem, tol: f64, t_star: *mut f64) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        if !(tol > 0.0) {
            return Err(Fail(HjbStatus::Config, "tol must be positive".into()));
        }
        write_out(t_star, p.problem.find_tstar(tol)?.t_star)
    })
}

/// Distinct solutions at `t`. `count` receives the total found; the first
/// `min(count, capacity)` are written back to back into `out`, which holds
/// `capacity * hjb_problem_len(p)` doubles. `out` may be null when `capacity` is 0.
///
/// # Safety
/// `out` must hold the stated number of doubles and `count` be valid.
#[no_mangle]
pub unsafe extern "C" fn hjb_problem_census(
    p: *const HjbProblem,
    t: f64,
    n_starts: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> HjbStatus {
    guard(|| {
        let p = handle(p)?;
        if count.is_null() {
            return Err(null("count"));
        }
        let c = p.problem.count_solutions(t, n_starts, seed)?;
        let n = p.setup.grid.len();
        if capacity > 0 {
            let buf = slice_out(out, capacity * n, capacity * n)?;
            for (u, chunk) in c.solutions.iter().zip(buf.chunks_mut(n)) {
                chunk.copy_from_slice(&u.values);
            }
        }
        count.write(c.solutions.len());
        Ok(())
    })
}
