//! C ABI for the denoising library: opaque handles, integer status codes,
//! and a thread-local last-error message.
//!
//! Every function returns `DMDEN_OK` (0) on success or a nonzero status; the
//! numeric values mirror the CLI exit codes (2 parameter/config, 3 numeric,
//! 4 i/o) plus 5 for null-pointer misuse. Out parameters are written only on
//! success. Handles must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dmden_core::diffusion::{deterministic_denoise, Observation, OracleDenoiser, StepwiseDenoiser};
use dmden_core::error::Error;
use dmden_core::gmm::Gmm;
use dmden_core::schedule::NoiseSchedule;
use dmden_core::{analysis, gmm, model};
use nalgebra::DVector;

pub const DMDEN_OK: i32 = 0;
pub const DMDEN_ERR_PARAM: i32 = 2;
pub const DMDEN_ERR_NUMERIC: i32 = 3;
pub const DMDEN_ERR_IO: i32 = 4;
pub const DMDEN_ERR_NULL: i32 = 5;

/// Opaque noise schedule handle.
pub struct DmdenSchedule(NoiseSchedule);

/// Opaque Gaussian-mixture handle.
pub struct DmdenGmm(Gmm);

/// Opaque denoiser handle (oracle or loaded network).
pub struct DmdenDenoiser(Box<dyn StepwiseDenoiser>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(e: Error) -> i32 {
    let code = e.exit_code();
    set_error(e.to_string());
    code
}

fn fail_null(what: &str) -> i32 {
    set_error(format!("null pointer: {what}"));
    DMDEN_ERR_NULL
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic".into());
            DMDEN_ERR_NUMERIC
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<String, i32> {
    if ptr.is_null() {
        return Err(fail_null("path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            Err(DMDEN_ERR_PARAM)
        }
    }
}

/// Message describing the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dmden_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Build a linear schedule with inclusive endpoints.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dmden_schedule_linear(
    t_steps: usize,
    beta1: f64,
    beta_t: f64,
    gamma: f64,
    out: *mut *mut DmdenSchedule,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        match NoiseSchedule::linear(t_steps, beta1, beta_t, gamma) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(DmdenSchedule(s)));
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must be a pointer returned by a schedule constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmden_schedule_free(s: *mut DmdenSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of steps T.
///
/// # Safety
/// `s` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_schedule_len(s: *const DmdenSchedule, out: *mut usize) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        *out = (*s).0.len();
        DMDEN_OK
    })
}

/// Per-step SNR in dB at 1-based step t.
///
/// # Safety
/// `s` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_schedule_snr_db(
    s: *const DmdenSchedule,
    t: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        let sched = &(*s).0;
        if t < 1 || t > sched.len() {
            return fail(Error::param("t", format!("outside 1..={}", sched.len())));
        }
        *out = sched.snr_dm_db(t);
        DMDEN_OK
    })
}

/// Step whose SNR best matches an observation noise variance.
///
/// # Safety
/// `s` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_schedule_match_timestep(
    s: *const DmdenSchedule,
    eta_sq: f64,
    out: *mut usize,
) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        match (*s).0.match_timestep(eta_sq) {
            Ok(t) => {
                *out = t;
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Stepwise Lipschitz constant L_t (t >= 2).
///
/// # Safety
/// `s` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_lipschitz_step(
    s: *const DmdenSchedule,
    t: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        match analysis::lipschitz_step(&(*s).0, t) {
            Ok(v) => {
                *out = v;
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Composed Lipschitz constant over steps tau1..tau2.
///
/// # Safety
/// `s` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_lipschitz_range(
    s: *const DmdenSchedule,
    tau1: usize,
    tau2: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        match analysis::lipschitz_range(&(*s).0, tau1, tau2) {
            Ok(v) => {
                *out = v;
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

/// Random mixture with `n` dimensions and `k` components; optionally
/// normalized to zero mean and per-entry unit energy.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_random(
    n: usize,
    k: usize,
    seed: u64,
    normalize: bool,
    out: *mut *mut DmdenGmm,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let build = || -> dmden_core::Result<Gmm> {
            let g = Gmm::random(n, k, seed)?;
            if normalize {
                g.normalize()
            } else {
                Ok(g)
            }
        };
        match build() {
            Ok(g) => {
                *out = Box::into_raw(Box::new(DmdenGmm(g)));
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a mixture from a `DMDEN-GMM v1` text file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_load(path: *const c_char, out: *mut *mut DmdenGmm) -> i32 {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match gmm::load(Path::new(&path)) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(DmdenGmm(g)));
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Save a mixture to the `DMDEN-GMM v1` text format.
///
/// # Safety
/// `g` must be a live mixture handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_save(g: *const DmdenGmm, path: *const c_char) -> i32 {
    guard(|| {
        if g.is_null() {
            return fail_null("gmm");
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match gmm::save(&(*g).0, Path::new(&path)) {
            Ok(()) => DMDEN_OK,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `g` must be a pointer returned by a mixture constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_free(g: *mut DmdenGmm) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Dimension and component count.
///
/// # Safety
/// `g` must be a live mixture handle.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_shape(
    g: *const DmdenGmm,
    n_out: *mut usize,
    k_out: *mut usize,
) -> i32 {
    guard(|| {
        if g.is_null() || n_out.is_null() || k_out.is_null() {
            return fail_null("gmm/out");
        }
        *n_out = (*g).0.dim();
        *k_out = (*g).0.num_components();
        DMDEN_OK
    })
}

/// Conditional mean E[x|y] under y = x + n, n ~ N(0, eta_sq I). `y` and
/// `x_hat_out` are length-`len` arrays; `len` must equal the mixture
/// dimension.
///
/// # Safety
/// `g` must be a live mixture handle; `y` and `x_hat_out` must point to
/// `len` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmden_gmm_cme(
    g: *const DmdenGmm,
    y: *const f64,
    len: usize,
    eta_sq: f64,
    x_hat_out: *mut f64,
) -> i32 {
    guard(|| {
        if g.is_null() || y.is_null() || x_hat_out.is_null() {
            return fail_null("gmm/y/out");
        }
        let gmm = &(*g).0;
        if len != gmm.dim() {
            return fail(Error::param(
                "len",
                format!("expected {}, got {len}", gmm.dim()),
            ));
        }
        let y = DVector::from_column_slice(std::slice::from_raw_parts(y, len));
        match gmm.cme(&y, eta_sq) {
            Ok(est) => {
                std::slice::from_raw_parts_mut(x_hat_out, len).copy_from_slice(est.as_slice());
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Denoisers
// ---------------------------------------------------------------------------

/// Exact-conditional-mean denoiser over a mixture prior.
///
/// # Safety
/// `g` and `s` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn dmden_denoiser_oracle(
    g: *const DmdenGmm,
    s: *const DmdenSchedule,
    out: *mut *mut DmdenDenoiser,
) -> i32 {
    guard(|| {
        if g.is_null() || s.is_null() || out.is_null() {
            return fail_null("gmm/schedule/out");
        }
        match OracleDenoiser::new(&(*g).0, &(*s).0) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(DmdenDenoiser(Box::new(d))));
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Denoiser from a `DMDEN-MLP v1` checkpoint.
///
/// # Safety
/// `s` must be a live schedule handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dmden_denoiser_from_checkpoint(
    path: *const c_char,
    s: *const DmdenSchedule,
    out: *mut *mut DmdenDenoiser,
) -> i32 {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail_null("schedule/out");
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let build = || -> dmden_core::Result<Box<dyn StepwiseDenoiser>> {
            let net = model::load(Path::new(&path))?;
            Ok(Box::new(model::as_denoiser(net, &(*s).0)?))
        };
        match build() {
            Ok(d) => {
                *out = Box::into_raw(Box::new(DmdenDenoiser(d)));
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `d` must be a pointer returned by a denoiser constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmden_denoiser_free(d: *mut DmdenDenoiser) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Deterministic denoising of one observation: writes the estimate of x_0
/// into `x_hat_out` and the matched step into `t_hat_out` (may be NULL).
///
/// # Safety
/// `d` must be a live denoiser handle; `y` and `x_hat_out` must point to
/// `len` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmden_denoise(
    d: *const DmdenDenoiser,
    y: *const f64,
    len: usize,
    eta_sq: f64,
    x_hat_out: *mut f64,
    t_hat_out: *mut usize,
) -> i32 {
    guard(|| {
        if d.is_null() || y.is_null() || x_hat_out.is_null() {
            return fail_null("denoiser/y/out");
        }
        let y = DVector::from_column_slice(std::slice::from_raw_parts(y, len));
        let run = || -> dmden_core::Result<(DVector<f64>, usize)> {
            let obs = Observation::matched(y, eta_sq)?;
            deterministic_denoise((*d).0.as_ref(), &obs)
        };
        match run() {
            Ok((est, t_hat)) => {
                if est.len() != len {
                    return fail(Error::param(
                        "len",
                        format!("expected {}, got {len}", est.len()),
                    ));
                }
                std::slice::from_raw_parts_mut(x_hat_out, len).copy_from_slice(est.as_slice());
                if !t_hat_out.is_null() {
                    *t_hat_out = t_hat;
                }
                DMDEN_OK
            }
            Err(e) => fail(e),
        }
    })
}
