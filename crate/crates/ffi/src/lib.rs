//! C interface to `structpen`.
//!
//! Objects are opaque handles created by `sp_*_new`/`sp_fit*` and released
//! by the matching `sp_*_free`. Every fallible call returns an [`SpStatus`];
//! on failure, [`sp_last_error`] describes the most recent error on the
//! calling thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array2, ArrayView2};
use structpen::data::StandardizeOptions;
use structpen::estimator::{fit_standardized, SolverOptions};
use structpen::selection::{tune_and_fit, TuneOptions};
use structpen::{Dataset, Error, FitResult, Method, PenaltyConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Numerical = 5,
    Io = 6,
    /// The call was aborted by an internal panic.
    Internal = 7,
}

/// Feature blocks and responses.
pub struct SpDataset {
    inner: Dataset,
}

/// A fitted model.
pub struct SpFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SpStatus {
    match err {
        Error::DimensionMismatch(_) | Error::EmptyBlock(_) => SpStatus::DimensionMismatch,
        Error::NonFinite { .. } => SpStatus::NonFinite,
        Error::Numerical(_) => SpStatus::Numerical,
        Error::Io { .. } | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => SpStatus::Io,
        Error::InvalidParameter(_) | Error::Unsupported(_) => SpStatus::InvalidArgument,
    }
}

struct Fail(SpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal error (panic)".into());
            SpStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn method_of(method: *const c_char) -> Result<Method, Fail> {
    if method.is_null() {
        return Err(null("method"));
    }
    let name = CStr::from_ptr(method)
        .to_str()
        .map_err(|_| Fail(SpStatus::InvalidArgument, "method is not UTF-8".into()))?;
    name.parse::<Method>().map_err(|e| Fail(SpStatus::InvalidArgument, e.to_string()))
}

/// Last error message on this thread, or null if none. The
/// string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a dataset from `y` (`n × m`) and `x` (`n × p`, the blocks side by
/// side, `block_sizes` summing to `p`).
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_new(
    y: *const f64,
    n: usize,
    m: usize,
    x: *const f64,
    p: usize,
    block_sizes: *const usize,
    n_blocks: usize,
    out: *mut *mut SpDataset,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let y = slice(y, n * m, "y")?;
        let x = slice(x, n * p, "x")?;
        if block_sizes.is_null() && n_blocks > 0 {
            return Err(null("block_sizes"));
        }
        let sizes = if n_blocks == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(block_sizes, n_blocks)
        };
        if sizes.iter().sum::<usize>() != p {
            return Err(Fail(
                SpStatus::DimensionMismatch,
                format!("block sizes sum to {}, x has {p} columns", sizes.iter().sum::<usize>()),
            ));
        }
        let xa = ArrayView2::from_shape((n, p), x).map_err(|e| Fail(SpStatus::DimensionMismatch, e.to_string()))?;
        let ya = Array2::from_shape_vec((n, m), y.to_vec())
            .map_err(|e| Fail(SpStatus::DimensionMismatch, e.to_string()))?;
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut start = 0;
        for &s in sizes {
            blocks.push(xa.slice(ndarray::s![.., start..start + s]).to_owned());
            start += s;
        }
        let ds = Dataset::new(ya, blocks, None)?;
        *out = Box::into_raw(Box::new(SpDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`sp_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_free(ds: *mut SpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fit `method` at penalty level `lambda` on internally standardized
/// features. `ratios` (one per block, first 1) and `alphas` may be empty.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `method` must be a
/// NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit(
    ds: *const SpDataset,
    method: *const c_char,
    lambda: f64,
    ratios: *const f64,
    n_ratios: usize,
    alphas: *const f64,
    n_alphas: usize,
    out: *mut *mut SpFit,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let mut cfg = PenaltyConfig::new(method_of(method)?, lambda);
        if n_ratios > 0 {
            cfg.ratios = slice(ratios, n_ratios, "ratios")?.to_vec();
        }
        if n_alphas > 0 {
            cfg.alphas = slice(alphas, n_alphas, "alphas")?.to_vec();
        }
        cfg.validate(ds.inner.n_blocks())?;
        let fit = fit_standardized(
            &ds.inner,
            &cfg,
            None,
            &SolverOptions::default(),
            &StandardizeOptions::default(),
        )?;
        *out = Box::into_raw(Box::new(SpFit { inner: fit }));
        Ok(())
    })
}

/// Tune `method` by `folds`-fold cross-validation and refit on all rows.
///
/// # Safety
/// As for [`sp_fit`].
#[no_mangle]
pub unsafe extern "C" fn sp_tune(
    ds: *const SpDataset,
    method: *const c_char,
    folds: usize,
    n_lambda: usize,
    max_evals: usize,
    seed: u64,
    out: *mut *mut SpFit,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let mut opts = TuneOptions {
            folds,
            n_lambda,
            seed,
            ..TuneOptions::default()
        };
        opts.epsgo.max_evals = max_evals;
        let outcome = tune_and_fit(&ds.inner, method_of(method)?, &opts)?;
        *out = Box::into_raw(Box::new(SpFit { inner: outcome.fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`sp_fit`] or [`sp_tune`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_free(fit: *mut SpFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of features `p` and responses `m` of a fit.
///
/// # Safety
/// `fit` must be a live handle; `p` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_dims(fit: *const SpFit, p: *mut usize, m: *mut usize) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if p.is_null() || m.is_null() {
            return Err(null("output"));
        }
        *p = fit.inner.n_features();
        *m = fit.inner.n_responses();
        Ok(())
    })
}

/// 1 if the solver converged, 0 otherwise.
///
/// # Safety
/// `fit` must be a live handle; `converged` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_converged(fit: *const SpFit, converged: *mut i32) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if converged.is_null() {
            return Err(null("converged"));
        }
        *converged = i32::from(fit.inner.converged);
        Ok(())
    })
}

/// Penalty level `λ₁` of the fit, in standardized-feature units.
///
/// # Safety
/// `fit` must be a live handle; `lambda` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_lambda(fit: *const SpFit, lambda: *mut f64) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if lambda.is_null() {
            return Err(null("lambda"));
        }
        *lambda = fit.inner.penalty.lambda1;
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("buffer"));
    }
    if len != src.len() {
        return Err(Fail(
            SpStatus::DimensionMismatch,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
    Ok(())
}

/// Copy the `p × m` coefficient matrix (row-major) into `buf` of length `len`.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_coefficients(fit: *const SpFit, buf: *mut f64, len: usize) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let b = fit.inner.coef_dense();
        copy_out(&b.iter().copied().collect::<Vec<_>>(), buf, len)
    })
}

/// Copy the `m` intercepts into `buf` of length `len`.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_intercepts(fit: *const SpFit, buf: *mut f64, len: usize) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(&fit.inner.intercepts, buf, len)
    })
}

/// Predict the `n × m` responses (row-major) of `ds` into `buf`.
///
/// # Safety
/// Handles must be live; `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_predict(
    fit: *const SpFit,
    ds: *const SpDataset,
    buf: *mut f64,
    len: usize,
) -> SpStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let pred = fit.inner.predict(&ds.inner)?;
        copy_out(&pred.iter().copied().collect::<Vec<_>>(), buf, len)
    })
}

/// Serialize a fit to JSON. Release the string with [`sp_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_to_json(fit: *const SpFit, out: *mut *mut c_char) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let text = serde_json::to_string(&fit.inner).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|e| Fail(SpStatus::Internal, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
