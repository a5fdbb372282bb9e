//! C ABI over the `stable-dyn` vector-field models.
//!
//! Models are opaque [`SdModel`] handles created by `sd_model_new_random` or
//! `sd_model_load` and released with `sd_model_free`. Every fallible call
//! returns an [`SdStatus`]; on failure `sd_last_error_message` describes the
//! most recent error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_dyn::cli::{dynamics_checkpoint, load_dynamics, Checkpoint};
use stable_dyn::diff::Tensor;
use stable_dyn::ode::rollout;
use stable_dyn::train::{DynamicsModel, ModelKind, TrainConfig};
use stable_dyn::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    Schema = 6,
    Numeric = 7,
    Divergence = 8,
    Panic = 9,
}

/// Opaque handle to a trained or random vector-field model.
pub struct SdModel {
    model: DynamicsModel,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn status_of(err: &Error) -> SdStatus {
    match err {
        Error::Shape(_) => SdStatus::ShapeMismatch,
        Error::Contract(_) | Error::MissingBinding(_) => SdStatus::InvalidArgument,
        Error::Numeric(_) | Error::DegenerateGradient { .. } | Error::Singular => SdStatus::Numeric,
        Error::Divergence { .. } => SdStatus::Divergence,
        Error::Io { .. } => SdStatus::Io,
        Error::Parse { .. } => SdStatus::Parse,
        Error::Schema(_) => SdStatus::Schema,
    }
}

struct Fail(SdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SdStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SdStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const SdModel) -> Result<&'a SdModel, Fail> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SdStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn check_dim(m: &SdModel, n: usize) -> Result<(), Fail> {
    if n != m.model.state_dim() {
        return Err(Fail(
            SdStatus::ShapeMismatch,
            format!("model state dim is {}, got {n}", m.model.state_dim()),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn sd_status_string(status: SdStatus) -> *const c_char {
    let s: &'static str = match status {
        SdStatus::Ok => "ok\0",
        SdStatus::NullPointer => "null pointer\0",
        SdStatus::InvalidArgument => "invalid argument\0",
        SdStatus::ShapeMismatch => "shape mismatch\0",
        SdStatus::Io => "i/o error\0",
        SdStatus::Parse => "parse error\0",
        SdStatus::Schema => "checkpoint schema error\0",
        SdStatus::Numeric => "numeric error\0",
        SdStatus::Divergence => "rollout diverged\0",
        SdStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

/// Message for the last failed call on this thread (empty after a success).
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a freshly initialised model.
///
/// `stable` selects the projected stable model (nonzero) or the bare nominal
/// network (zero). Hidden widths are read from the two arrays.
///
/// # Safety
/// Width arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_new_random(
    state_dim: usize,
    stable: i32,
    fhat_hidden: *const usize,
    fhat_len: usize,
    icnn_hidden: *const usize,
    icnn_len: usize,
    alpha: f64,
    epsilon: f64,
    smooth_d: f64,
    seed: u64,
    out: *mut *mut SdModel,
) -> SdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if state_dim == 0 {
            return Err(Fail(SdStatus::InvalidArgument, "state dim must be positive".into()));
        }
        let config = TrainConfig {
            kind: if stable != 0 {
                ModelKind::Stable
            } else {
                ModelKind::Naive
            },
            fhat_hidden: slice(fhat_hidden, fhat_len, "fhat_hidden")?.to_vec(),
            icnn_hidden: slice(icnn_hidden, icnn_len, "icnn_hidden")?.to_vec(),
            alpha,
            epsilon,
            smooth_d,
            seed,
            ..TrainConfig::default()
        };
        let model = config.init_model(state_dim, &mut ChaCha8Rng::seed_from_u64(seed))?;
        *out = Box::into_raw(Box::new(SdModel { model, config }));
        Ok(())
    })
}

/// Loads a dynamics checkpoint written by `sd_model_save` or `stable-dyn pendulum train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_load(path: *const c_char, out: *mut *mut SdModel) -> SdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ck = Checkpoint::load(c_path(path)?)?;
        let (model, config) = load_dynamics(&ck)?;
        *out = Box::into_raw(Box::new(SdModel { model, config }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_model_save(model: *const SdModel, path: *const c_char) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        dynamics_checkpoint(&m.model, &m.config).save(c_path(path)?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_model_free(model: *mut SdModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_state_dim(model: *const SdModel, out: *mut usize) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.state_dim();
        Ok(())
    })
}

/// Writes 1 for a stable model and 0 for a naive one.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_is_stable(model: *const SdModel, out: *mut i32) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = i32::from(m.model.kind() == ModelKind::Stable);
        Ok(())
    })
}

/// Vector field `f(x)` at `n` coordinates of `x`, written to `out`.
///
/// # Safety
/// `x` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_model_eval(model: *const SdModel, x: *const f64, n: usize, out: *mut f64) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m, n)?;
        let xs = slice(x, n, "x")?;
        let dst = slice_mut(out, n, "out")?;
        dst.copy_from_slice(&m.model.f(xs)?);
        Ok(())
    })
}

/// `V(x)` and, when `grad` is non-null, `∇V(x)`. Fails for naive models.
///
/// # Safety
/// `x` (and `grad` if given) must hold `n` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_lyapunov(
    model: *const SdModel,
    x: *const f64,
    n: usize,
    value: *mut f64,
    grad: *mut f64,
) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m, n)?;
        let stable = m.model.as_stable().ok_or_else(|| {
            Fail(
                SdStatus::InvalidArgument,
                "naive models have no Lyapunov function".into(),
            )
        })?;
        let xs = slice(x, n, "x")?;
        let v_out = value.as_mut().ok_or_else(|| null("value"))?;
        let (v, g) = stable.lyap.value_and_grad_batch(&Tensor::row(xs))?;
        *v_out = v.item()?;
        if !grad.is_null() {
            slice_mut(grad, n, "grad")?.copy_from_slice(g.as_slice());
        }
        Ok(())
    })
}

/// RK4 rollout of `steps` steps from `x0`; `out` receives `(steps + 1) · n`
/// doubles, row by row. On divergence the status is `SD_STATUS_DIVERGENCE` and `out`
/// is left untouched.
///
/// # Safety
/// `x0` must hold `n` doubles and `out` `(steps + 1) · n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_model_rollout(
    model: *const SdModel,
    x0: *const f64,
    n: usize,
    dt: f64,
    steps: usize,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m, n)?;
        let start = slice(x0, n, "x0")?;
        let total = steps
            .checked_add(1)
            .and_then(|s| s.checked_mul(n))
            .ok_or_else(|| Fail(SdStatus::InvalidArgument, "output size overflows".into()))?;
        let dst = slice_mut(out, total, "out")?;
        let mut field = m.model.compile(1)?;
        let traj = rollout(
            |x: &[f64]| Ok(field.eval(&Tensor::row(x))?.into_vec()),
            start,
            dt,
            steps,
        )?;
        for (chunk, s) in dst.chunks_mut(n).zip(&traj.states) {
            chunk.copy_from_slice(s);
        }
        Ok(())
    })
}
