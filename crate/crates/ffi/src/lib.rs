//! C ABI over `mcinfonce`.
//!
//! Every fallible function returns an [`McStatus`]; on failure a message is
//! available from [`mcinfonce_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mcinfonce::credible::ci_threshold;
use mcinfonce::genproc::{Family, GenerativeProcess, ProcessConfig};
use mcinfonce::metrics::PosteriorModel;
use mcinfonce::nn::{Checkpoint, Tensor};
use mcinfonce::oracle::{log_marginal_h, OracleQuery};
use mcinfonce::training::EncoderModel;
use mcinfonce::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument, configuration or dimension.
    InvalidArgument = 2,
    /// Numeric failure: degenerate normalization, sampler caps, non-finite loss.
    Numeric = 3,
    Io = 4,
    Checkpoint = 5,
    Panic = 6,
}

/// Posterior family codes accepted by [`mcinfonce_process_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McFamily {
    Vmf = 0,
    Gaussian = 1,
    Laplace = 2,
    Dirac = 3,
}

impl From<McFamily> for Family {
    fn from(f: McFamily) -> Self {
        match f {
            McFamily::Vmf => Family::Vmf,
            McFamily::Gaussian => Family::Gaussian,
            McFamily::Laplace => Family::Laplace,
            McFamily::Dirac => Family::Dirac,
        }
    }
}

/// Opaque generative process.
pub struct McProcess(GenerativeProcess);

/// Opaque trained encoder.
pub struct McEncoder(EncoderModel);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(e: &Error) -> McStatus {
    match e {
        Error::Io(_) => McStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => McStatus::Checkpoint,
        e if e.is_numeric() => McStatus::Numeric,
        _ => McStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (McStatus, String)>) -> McStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            McStatus::Panic
        }
    }
}

fn lift<T>(r: mcinfonce::Result<T>) -> Result<T, (McStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (McStatus, String) {
    (McStatus::NullPointer, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Builds a generative process. `out` receives a handle to free with
/// [`mcinfonce_process_free`].
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_process_new(
    dim: usize,
    kappa_min: f64,
    kappa_max: f64,
    family: McFamily,
    kappa_pos: f64,
    seed: u64,
    out: *mut *mut McProcess,
) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = lift(GenerativeProcess::new(ProcessConfig {
            dim,
            kappa_min,
            kappa_max,
            family: family.into(),
            kappa_pos,
            seed,
        }))?;
        *out = Box::into_raw(Box::new(McProcess(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`mcinfonce_process_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_process_free(p: *mut McProcess) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Input dimension of the process, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_process_dim(p: *const McProcess) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// Loads an encoder checkpoint written by the CLI's `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_encoder_load(
    path: *const c_char,
    out: *mut *mut McEncoder,
) -> McStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (McStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let c = lift(Checkpoint::load(Path::new(path)))?;
        let e = lift(EncoderModel::from_checkpoint(&c))?;
        *out = Box::into_raw(Box::new(McEncoder(e)));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a handle from [`mcinfonce_encoder_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_encoder_free(e: *mut McEncoder) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Input and latent dimensions of the encoder.
///
/// # Safety
/// `e` must be a live handle; `d_in`, `d_enc` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_encoder_dims(
    e: *const McEncoder,
    d_in: *mut usize,
    d_enc: *mut usize,
) -> McStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("encoder"))?;
        if d_in.is_null() || d_enc.is_null() {
            return Err(null("output"));
        }
        *d_in = e.0.d_in();
        *d_enc = e.0.d_enc();
        Ok(())
    })
}

unsafe fn posterior(
    model: &dyn PosteriorModel,
    xs: *const f64,
    n: usize,
    mu_out: *mut f64,
    kappa_out: *mut f64,
) -> Result<(), (McStatus, String)> {
    if n == 0 {
        return Ok(());
    }
    if xs.is_null() || mu_out.is_null() || kappa_out.is_null() {
        return Err(null("buffer"));
    }
    let d_in = model.input_dim();
    let d_out = model.latent_dim();
    let xs = std::slice::from_raw_parts(xs, n * d_in);
    let t = lift(Tensor::new(vec![n, d_in], xs.to_vec()))?;
    let (mu, kappa) = lift(model.posterior_batch(&t))?;
    std::slice::from_raw_parts_mut(mu_out, n * d_out).copy_from_slice(mu.data());
    std::slice::from_raw_parts_mut(kappa_out, n).copy_from_slice(&kappa);
    Ok(())
}

/// True posteriors for `n` row-major observations. Writes `n·dim` mean
/// coordinates to `mu_out` and `n` concentrations (`inf` for Dirac) to
/// `kappa_out`.
///
/// # Safety
/// `xs` must hold `n·dim` values, `mu_out` room for `n·dim`, `kappa_out` for `n`.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_process_posterior(
    p: *const McProcess,
    xs: *const f64,
    n: usize,
    mu_out: *mut f64,
    kappa_out: *mut f64,
) -> McStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("process"))?;
        posterior(&p.0, xs, n, mu_out, kappa_out)
    })
}

/// Predicted posteriors; as [`mcinfonce_process_posterior`] with `d_in`
/// inputs and `d_enc` mean coordinates per row.
///
/// # Safety
/// `xs` must hold `n·d_in` values, `mu_out` room for `n·d_enc`, `kappa_out` for `n`.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_encoder_posterior(
    e: *const McEncoder,
    xs: *const f64,
    n: usize,
    mu_out: *mut f64,
    kappa_out: *mut f64,
) -> McStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("encoder"))?;
        posterior(&e.0, xs, n, mu_out, kappa_out)
    })
}

/// Dot-product threshold of the level-`p` credible interval of a vMF with
/// concentration `kappa` on the sphere in `dim` dimensions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_ci_threshold(
    kappa: f64,
    p: f64,
    dim: usize,
    out: *mut f64,
) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(ci_threshold(kappa, p, dim))?;
        Ok(())
    })
}

/// Log of the marginal match probability `h` between two posteriors with
/// mean dot product `rho` and concentrations `kappa`, `kappa_plus`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcinfonce_log_marginal_h(
    rho: f64,
    kappa: f64,
    kappa_plus: f64,
    kappa_pos: f64,
    dim: usize,
    out: *mut f64,
) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(log_marginal_h(&OracleQuery {
            rho,
            kappa,
            kappa_plus,
            kappa_pos,
            dim,
        }))?;
        Ok(())
    })
}
