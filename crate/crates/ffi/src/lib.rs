//! C ABI for the fracsde library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_sample` functions and released by the matching `*_free`. Every fallible
//! function returns a [`FracsdeStatus`]; on failure the message is available
//! from [`fracsde_last_error_message`] on the same thread. Output buffers are
//! caller-allocated and must have exactly the documented length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fracsde::fbm::{FbmPath, FbmSampler, Hurst};
use fracsde::flow::doss_solution;
use fracsde::limits::theoretical_rate;
use fracsde::model::{CoefficientModel, ModelSpec};
use fracsde::schemes::{run_scheme, RunOptions, SchemeKind};
use fracsde::variations;
use fracsde::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracsdeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed string, wrong buffer length or similar.
    InvalidArgument = 2,
    /// Parameter outside the domain of the quantity.
    Domain = 3,
    /// Documented precondition violated.
    Contract = 4,
    /// Unknown model or bad model parameters.
    Config = 5,
    /// Solver, root finder or factorization failure.
    Numeric = 6,
    Io = 7,
    /// Internal panic caught at the boundary.
    Panic = 8,
}

/// Approximation scheme selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracsdeScheme {
    Euler = 0,
    Milstein = 1,
    CrankNicolson = 2,
}

impl From<FracsdeScheme> for SchemeKind {
    fn from(s: FracsdeScheme) -> Self {
        match s {
            FracsdeScheme::Euler => SchemeKind::Euler,
            FracsdeScheme::Milstein => SchemeKind::Milstein,
            FracsdeScheme::CrankNicolson => SchemeKind::CrankNicolson,
        }
    }
}

/// Coefficient pair `(b, σ)`.
pub struct FracsdeModel(CoefficientModel);

/// Sampled fBm path on a dyadic grid.
pub struct FracsdePath(FbmPath);

struct Failure(FracsdeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => FracsdeStatus::Domain,
            Error::Contract(_) => FracsdeStatus::Contract,
            Error::Config(_) | Error::Json(_) => FracsdeStatus::Config,
            Error::Solver { .. } | Error::Factorization { .. } | Error::InadmissibleStep { .. } | Error::Numeric(_) => {
                FracsdeStatus::Numeric
            }
            Error::Io(_) => FracsdeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FracsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FracsdeStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_last_error(&format!("panic: {message}"));
            FracsdeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FracsdeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: String) -> Failure {
    Failure(FracsdeStatus::InvalidArgument, message)
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_to(buf: *mut f64, len: usize, values: &[f64]) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    if len != values.len() {
        return Err(invalid(format!("output buffer holds {len} values, {} required", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, len);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fracsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failed call on this thread, or null if none
/// failed yet. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fracsde_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a registered model (`constant`, `linear-drift`, `sinh`, `trig`).
///
/// # Safety
/// `name` must be a NUL-terminated string. `params_json` is a NUL-terminated
/// JSON object or null for defaults. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_model_new(
    name: *const c_char,
    params_json: *const c_char,
    out: *mut *mut FracsdeModel,
) -> FracsdeStatus {
    guard(|| {
        let name = c_str(name, "name")?;
        let params = if params_json.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            let text = c_str(params_json, "params_json")?;
            serde_json::from_str(text).map_err(|e| Failure(FracsdeStatus::Config, format!("params_json: {e}")))?
        };
        let model = ModelSpec::new(name, params).build()?;
        write_out(out, Box::into_raw(Box::new(FracsdeModel(model))), "out")
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`fracsde_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fracsde_model_free(model: *mut FracsdeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Drift `b(x)` and diffusion `σ(x)`.
///
/// # Safety
/// `model` must be a live handle; `b` and `sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_model_eval(
    model: *const FracsdeModel,
    x: f64,
    b: *mut f64,
    sigma: *mut f64,
) -> FracsdeStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        write_out(b, m.b(x), "b")?;
        write_out(sigma, m.sigma(x), "sigma")
    })
}

/// Samples fBm on `2^fine_level + 1` nodes of `[0, 1]` from the stream
/// `(seed, index)`. The path starts at level `fine_level`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_fbm_sample(
    fine_level: u32,
    hurst: f64,
    seed: u64,
    index: u64,
    out: *mut *mut FracsdePath,
) -> FracsdeStatus {
    guard(|| {
        let sampler = FbmSampler::new(fine_level, Hurst::new(hurst)?)?;
        let path = sampler.sample(seed, index);
        write_out(out, Box::into_raw(Box::new(FracsdePath(path))), "out")
    })
}

/// Releases a path; null is ignored.
///
/// # Safety
/// `path` must come from [`fracsde_fbm_sample`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fracsde_path_free(path: *mut FracsdePath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Sets the scheme level `m ≤ fine_level` used by [`fracsde_scheme_run`].
///
/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fracsde_path_set_level(path: *mut FracsdePath, level: u32) -> FracsdeStatus {
    guard(|| {
        let p = path.as_mut().ok_or_else(|| null("path"))?;
        p.0 = p.0.clone().with_level(level)?;
        Ok(())
    })
}

/// Node count of the fine grid, `2^fine_level + 1`.
///
/// # Safety
/// `path` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_path_len(path: *const FracsdePath, len: *mut usize) -> FracsdeStatus {
    guard(|| write_out(len, deref(path, "path")?.0.values().len(), "len"))
}

/// Copies the fine-grid values.
///
/// # Safety
/// `path` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fracsde_path_values(path: *const FracsdePath, buf: *mut f64, len: usize) -> FracsdeStatus {
    guard(|| copy_to(buf, len, deref(path, "path")?.0.values()))
}

/// Runs a scheme at the path's level; writes `2^level + 1` grid values.
/// `frozen` may be null; otherwise it receives whether the implicit
/// scheme kept the trajectory constant.
///
/// # Safety
/// Handles must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fracsde_scheme_run(
    scheme: FracsdeScheme,
    model: *const FracsdeModel,
    xi: f64,
    path: *const FracsdePath,
    buf: *mut f64,
    len: usize,
    frozen: *mut bool,
) -> FracsdeStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let p = &deref(path, "path")?.0;
        let traj = run_scheme(scheme.into(), m, xi, p, &RunOptions::default())?;
        copy_to(buf, len, &traj.values)?;
        if !frozen.is_null() {
            frozen.write(traj.frozen);
        }
        Ok(())
    })
}

/// Exact solution driven by the piecewise-linear fine path; writes one
/// value per fine node.
///
/// # Safety
/// Handles must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fracsde_reference_solve(
    model: *const FracsdeModel,
    xi: f64,
    path: *const FracsdePath,
    buf: *mut f64,
    len: usize,
) -> FracsdeStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let p = &deref(path, "path")?.0;
        let reference = doss_solution(m, xi, p.values(), p.fine_step())?;
        copy_to(buf, len, &reference.x)
    })
}

/// Convergence rate `γ` of the scheme at Hurst index `hurst`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_theoretical_rate(scheme: FracsdeScheme, hurst: f64, out: *mut f64) -> FracsdeStatus {
    guard(|| write_out(out, theoretical_rate(scheme.into(), hurst)?, "out"))
}

/// `σ_{q,H}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_sigma_qh(q: usize, hurst: f64, out: *mut f64) -> FracsdeStatus {
    guard(|| write_out(out, variations::sigma_qh(q, hurst)?, "out"))
}

/// `σ̃_H`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_sigma_tilde(hurst: f64, out: *mut f64) -> FracsdeStatus {
    guard(|| write_out(out, variations::sigma_tilde(hurst)?, "out"))
}

/// Increment correlation `ρ_H(l)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_rho(hurst: f64, lag: u64, out: *mut f64) -> FracsdeStatus {
    guard(|| {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Failure(FracsdeStatus::Domain, format!("hurst must lie in (0, 1), got {hurst}")));
        }
        write_out(out, variations::rho(hurst, lag), "out")
    })
}

/// Trapezoid-kernel covariance `a(k, l)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_a_cov(hurst: f64, k: u64, l: u64, out: *mut f64) -> FracsdeStatus {
    guard(|| write_out(out, variations::a_cov(hurst, k, l)?, "out"))
}

/// Cross covariance `a†(k, l)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fracsde_a_dagger(hurst: f64, k: u64, l: u64, out: *mut f64) -> FracsdeStatus {
    guard(|| write_out(out, variations::a_dagger(hurst, k, l)?, "out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_set_message() {
        let mut v = 0.0;
        let status = unsafe { fracsde_sigma_qh(2, 0.9, &mut v) };
        assert_eq!(status, FracsdeStatus::Domain);
        let msg = unsafe { CStr::from_ptr(fracsde_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("domain"), "{msg}");
    }

    #[test]
    fn null_output_is_reported() {
        let status = unsafe { fracsde_sigma_tilde(0.5, ptr::null_mut()) };
        assert_eq!(status, FracsdeStatus::NullPointer);
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(fracsde_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
