//! C ABI for slipflow.
//!
//! Every fallible call returns a [`SlipflowStatus`]; on failure the message is
//! kept per thread and read back with [`slipflow_last_error`]. Handles are
//! opaque and owned by the caller once returned, each with its own `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slipflow::basis::{build_eigenbasis, Basis};
use slipflow::config::{RunConfig, Workbench, VERSION};
use slipflow::dynamics::Trajectory;
use slipflow::lifting::{trace_norm, BoundaryControl};
use slipflow::Error;

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipflowStatus {
    Ok = 0,
    InvalidConfig = 1,
    Dimension = 2,
    Resolution = 3,
    Incompatible = 4,
    Numerical = 5,
    OutsideHorizon = 6,
    InsufficientSamples = 7,
    Artifact = 8,
    Io = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for SlipflowStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidConfig(_) => SlipflowStatus::InvalidConfig,
            Error::Dimension { .. } => SlipflowStatus::Dimension,
            Error::Resolution(_) => SlipflowStatus::Resolution,
            Error::Incompatible { .. } => SlipflowStatus::Incompatible,
            Error::Numerical(_) => SlipflowStatus::Numerical,
            Error::OutsideHorizon { .. } => SlipflowStatus::OutsideHorizon,
            Error::InsufficientSamples { .. } => SlipflowStatus::InsufficientSamples,
            Error::Artifact(_) | Error::Json(_) => SlipflowStatus::Artifact,
            Error::Io(_) => SlipflowStatus::Io,
        }
    }
}

/// Parsed run configuration.
pub struct SlipflowConfig {
    inner: RunConfig,
}

/// Stokes-type eigenbasis.
pub struct SlipflowBasis {
    inner: Basis,
}

/// Galerkin model with its lifting and control parametrization.
pub struct SlipflowModel {
    inner: Workbench,
}

/// Boundary control on the model's time grid.
pub struct SlipflowControl {
    inner: BoundaryControl,
}

/// One simulated path.
pub struct SlipflowTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), SlipflowStatus>) -> SlipflowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlipflowStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SlipflowStatus::Panic
        }
    }
}

fn fail(e: Error) -> SlipflowStatus {
    let s = SlipflowStatus::from(&e);
    set_error(e.to_string());
    s
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, SlipflowStatus> {
    if p.is_null() {
        set_error("null handle".into());
        return Err(SlipflowStatus::NullPointer);
    }
    Ok(&*p)
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, SlipflowStatus> {
    if p.is_null() {
        set_error("null output pointer".into());
        return Err(SlipflowStatus::NullPointer);
    }
    Ok(&mut *p)
}

unsafe fn write_slice(src: &[f64], out: *mut f64, len: usize) -> Result<(), SlipflowStatus> {
    if len < src.len() {
        set_error(format!("buffer holds {len} values, need {}", src.len()));
        return Err(SlipflowStatus::BufferTooSmall);
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        set_error("null output buffer".into());
        return Err(SlipflowStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; valid until the next failure.
#[no_mangle]
pub extern "C" fn slipflow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slipflow_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    debug_assert_eq!(&V[..V.len() - 1], VERSION);
    V.as_ptr().cast()
}

/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slipflow_config_from_toml(
    toml: *const c_char,
    out: *mut *mut SlipflowConfig,
) -> SlipflowStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let text = CStr::from_ptr(deref(toml)?).to_str().map_err(|_| {
            set_error("config is not valid UTF-8".into());
            SlipflowStatus::InvalidConfig
        })?;
        let cfg = RunConfig::from_toml(text).map_err(fail)?;
        *out = boxed(SlipflowConfig { inner: cfg });
        Ok(())
    })
}

/// Writes the 64 hex digits of the config hash plus a NUL into `buf`.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn slipflow_config_hash(
    cfg: *const SlipflowConfig,
    buf: *mut c_char,
    len: usize,
) -> SlipflowStatus {
    guard(|| {
        let h = deref(cfg)?.inner.hash();
        if len < h.len() + 1 {
            set_error(format!("hash needs {} bytes", h.len() + 1));
            return Err(SlipflowStatus::BufferTooSmall);
        }
        out_ptr(buf)?;
        ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`slipflow_config_from_toml`] or be null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_config_free(cfg: *mut SlipflowConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn slipflow_basis_build(
    cfg: *const SlipflowConfig,
    out: *mut *mut SlipflowBasis,
) -> SlipflowStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let c = &deref(cfg)?.inner;
        let b = build_eigenbasis(&c.domain, c.basis.size).map_err(fail)?;
        *out = boxed(SlipflowBasis { inner: b });
        Ok(())
    })
}

/// # Safety
/// `basis` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_basis_len(basis: *const SlipflowBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.inner.len())
}

/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_basis_eigenvalues(
    basis: *const SlipflowBasis,
    out: *mut f64,
    len: usize,
) -> SlipflowStatus {
    guard(|| write_slice(&deref(basis)?.inner.eigenvalues(), out, len))
}

/// # Safety
/// `basis` must come from [`slipflow_basis_build`] or be null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_basis_free(basis: *mut SlipflowBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Build the full model (basis, lifting, drift) for a configuration.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn slipflow_model_new(
    cfg: *const SlipflowConfig,
    out: *mut *mut SlipflowModel,
) -> SlipflowStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let w = Workbench::new(&deref(cfg)?.inner).map_err(fail)?;
        *out = boxed(SlipflowModel { inner: w });
        Ok(())
    })
}

/// # Safety
/// `model` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_model_dim(model: *const SlipflowModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.model.dim())
}

/// Number of control parameters (atoms) of the model.
///
/// # Safety
/// `model` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_model_param_dim(model: *const SlipflowModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param.dim())
}

/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_model_initial_state(
    model: *const SlipflowModel,
    out: *mut f64,
    len: usize,
) -> SlipflowStatus {
    guard(|| write_slice(&deref(model)?.inner.beta0, out, len))
}

/// # Safety
/// `model` must come from [`slipflow_model_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_model_free(model: *mut SlipflowModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Control `Σ p_k atom_k` for `len` parameters; `len = 0` gives the zero control.
///
/// # Safety
/// `params` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_control_from_params(
    model: *const SlipflowModel,
    params: *const f64,
    len: usize,
    out: *mut *mut SlipflowControl,
) -> SlipflowStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let m = deref(model)?;
        let p: &[f64] = if len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(deref(params)?, len)
        };
        let c = m.inner.control(p).map_err(fail)?;
        *out = boxed(SlipflowControl { inner: c });
        Ok(())
    })
}

/// Trace-space norm of the control at time `t`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn slipflow_control_trace_norm(
    ctrl: *const SlipflowControl,
    t: f64,
    out: *mut f64,
) -> SlipflowStatus {
    guard(|| {
        let v = trace_norm(&deref(ctrl)?.inner, t).map_err(fail)?;
        *out_ptr(out)? = v;
        Ok(())
    })
}

/// # Safety
/// `ctrl` must come from [`slipflow_control_from_params`] or be null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_control_free(ctrl: *mut SlipflowControl) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Integrate path `path` of seed `seed` from the model's initial state.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn slipflow_simulate_path(
    model: *const SlipflowModel,
    ctrl: *const SlipflowControl,
    seed: u64,
    path: u64,
    out: *mut *mut SlipflowTrajectory,
) -> SlipflowStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let w = &deref(model)?.inner;
        let t = w
            .model
            .simulate_path(&deref(ctrl)?.inner, &w.beta0, seed, path)
            .map_err(fail)?;
        *out = boxed(SlipflowTrajectory { inner: t });
        Ok(())
    })
}

/// Number of stored time points.
///
/// # Safety
/// `traj` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_len(traj: *const SlipflowTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.times.len())
}

/// # Safety
/// `traj` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_blew_up(traj: *const SlipflowTrajectory) -> bool {
    traj.as_ref().is_some_and(|t| t.inner.blew_up)
}

/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_times(
    traj: *const SlipflowTrajectory,
    out: *mut f64,
    len: usize,
) -> SlipflowStatus {
    guard(|| write_slice(&deref(traj)?.inner.times, out, len))
}

/// `‖u_n(t_ℓ)‖²` at every stored time.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_energy(
    traj: *const SlipflowTrajectory,
    out: *mut f64,
    len: usize,
) -> SlipflowStatus {
    guard(|| write_slice(&deref(traj)?.inner.energy, out, len))
}

/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_final_state(
    traj: *const SlipflowTrajectory,
    out: *mut f64,
    len: usize,
) -> SlipflowStatus {
    guard(|| write_slice(deref(traj)?.inner.final_beta(), out, len))
}

/// # Safety
/// `traj` must come from [`slipflow_simulate_path`] or be null.
#[no_mangle]
pub unsafe extern "C" fn slipflow_trajectory_free(traj: *mut SlipflowTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
