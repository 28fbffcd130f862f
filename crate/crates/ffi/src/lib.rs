//! C ABI over the `neural_collapse` library.
//!
//! Conventions:
//! - Every fallible function returns an [`NcStatus`]; results go through
//!   out-pointers that are written only on success.
//! - Objects cross the boundary as opaque handles. Each `*_new`, `*_read_file`
//!   or `*_compute` handle must be released with the matching `*_free`.
//! - Matrices are dense row-major `double` buffers.
//! - On failure a message is stored per thread and read with
//!   [`nc_last_error_message`].
//! - Panics never unwind into C; they surface as [`NcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use neural_collapse::classify::webb_lowe;
use neural_collapse::codec::{analytic_exponent, simulate_error_rate, CodecInstance};
use neural_collapse::error::Error;
use neural_collapse::etf::standard_etf;
use neural_collapse::io::{
    read_classifier_file, read_pack_file, write_classifier_file, write_pack_file, ActivationPack, ClassifierSnapshot,
};
use neural_collapse::metrics::{duality_gap, nc1_collapse, ncc_mismatch};
use neural_collapse::moments::{compute_moments, default_rtol, Moments};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Degenerate = 6,
    NotConverged = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Which covariance [`nc_moments_copy_covariance`] returns.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcCovariance {
    Total = 0,
    Between = 1,
    Within = 2,
}

/// Balanced activation pack.
pub struct NcPack(ActivationPack);

/// First and second moments of a pack.
pub struct NcMoments(Moments);

/// Linear classifier snapshot (C × p weights plus bias).
pub struct NcClassifier(ClassifierSnapshot);

struct Failure {
    status: NcStatus,
    message: String,
}

impl Failure {
    fn new(status: NcStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::Stream(_) => NcStatus::Io,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::OversizeDeclaration { .. }
            | Error::NonFinite { .. }
            | Error::Unbalanced(_)
            | Error::Manifest(_)
            | Error::Json(_) => NcStatus::Format,
            Error::DimensionMismatch(_) => NcStatus::DimensionMismatch,
            Error::InvalidArgument(_) | Error::NotSymmetric { .. } | Error::NonOrthonormalPose(_) => {
                NcStatus::InvalidArgument
            }
            Error::DegenerateColumn(_)
            | Error::Degenerate(_)
            | Error::NoUniqueCircumsphere(_)
            | Error::Infeasible(_) => NcStatus::Degenerate,
            Error::NotConverged { .. } => NcStatus::NotConverged,
        };
        Failure::new(status, e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let sanitized: Vec<u8> = message.bytes().filter(|&b| b != 0).collect();
    let c = CString::new(sanitized).expect("interior nul bytes were removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> NcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {msg}"));
            NcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(NcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn path_arg(ptr: *const c_char) -> FfiResult<PathBuf> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(NcStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn checked_len(a: usize, b: usize) -> FfiResult<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Failure::new(NcStatus::InvalidArgument, "size overflow"))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> FfiResult<()> {
    if len < src.len() {
        return Err(Failure::new(
            NcStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn rtol_or_default(rtol: f64, p: usize) -> FfiResult<f64> {
    if rtol == 0.0 {
        Ok(default_rtol(p))
    } else if rtol > 0.0 && rtol.is_finite() {
        Ok(rtol)
    } else {
        Err(Failure::new(
            NcStatus::InvalidArgument,
            "rtol must be positive, or 0 for the default",
        ))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL when the last call
/// succeeded. The pointer stays valid until the next library call on the
/// same thread.
#[no_mangle]
pub extern "C" fn nc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Build a pack from `per_class * num_classes` rows of `feature_dim` values,
/// class-major (all rows of class 0 first).
///
/// # Safety
/// `data` must point to `feature_dim * num_classes * per_class` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_pack_new(
    feature_dim: usize,
    num_classes: usize,
    per_class: usize,
    data: *const f64,
    out: *mut *mut NcPack,
) -> NcStatus {
    guard(|| {
        let len = checked_len(checked_len(feature_dim, num_classes)?, per_class)?;
        let values = slice(data, len, "data")?.to_vec();
        let pack = ActivationPack::new(feature_dim, num_classes, per_class, values)?;
        put(out, Box::into_raw(Box::new(NcPack(pack))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_pack_read_file(path: *const c_char, out: *mut *mut NcPack) -> NcStatus {
    guard(|| {
        let pack = read_pack_file(path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(NcPack(pack))), "out")
    })
}

/// # Safety
/// `pack` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nc_pack_write_file(pack: *const NcPack, path: *const c_char) -> NcStatus {
    guard(|| {
        let pack = deref(pack, "pack")?;
        write_pack_file(&pack.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `pack` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_pack_dims(
    pack: *const NcPack,
    feature_dim: *mut usize,
    num_classes: *mut usize,
    per_class: *mut usize,
) -> NcStatus {
    guard(|| {
        let pack = &deref(pack, "pack")?.0;
        put(feature_dim, pack.feature_dim(), "feature_dim")?;
        put(num_classes, pack.num_classes(), "num_classes")?;
        put(per_class, pack.per_class(), "per_class")
    })
}

/// # Safety
/// `pack` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_pack_free(pack: *mut NcPack) {
    if !pack.is_null() {
        drop(Box::from_raw(pack));
    }
}

/// Build a classifier from row-major `num_classes × feature_dim` weights and
/// a `num_classes` bias.
///
/// # Safety
/// Buffers must hold the stated number of doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_new(
    num_classes: usize,
    feature_dim: usize,
    weights: *const f64,
    bias: *const f64,
    out: *mut *mut NcClassifier,
) -> NcStatus {
    guard(|| {
        let w = slice(weights, checked_len(num_classes, feature_dim)?, "weights")?;
        let b = slice(bias, num_classes, "bias")?;
        let clf = ClassifierSnapshot::from_row_major(num_classes, feature_dim, w, b)?;
        put(out, Box::into_raw(Box::new(NcClassifier(clf))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_read_file(path: *const c_char, out: *mut *mut NcClassifier) -> NcStatus {
    guard(|| {
        let clf = read_classifier_file(path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(NcClassifier(clf))), "out")
    })
}

/// # Safety
/// `clf` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_write_file(clf: *const NcClassifier, path: *const c_char) -> NcStatus {
    guard(|| {
        let clf = deref(clf, "classifier")?;
        write_classifier_file(&clf.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `clf` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_dims(
    clf: *const NcClassifier,
    num_classes: *mut usize,
    feature_dim: *mut usize,
) -> NcStatus {
    guard(|| {
        let clf = &deref(clf, "classifier")?.0;
        put(num_classes, clf.num_classes(), "num_classes")?;
        put(feature_dim, clf.feature_dim(), "feature_dim")
    })
}

/// Copy row-major weights (`weights_len >= C*p`) and bias (`bias_len >= C`).
///
/// # Safety
/// `clf` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_copy(
    clf: *const NcClassifier,
    weights: *mut f64,
    weights_len: usize,
    bias: *mut f64,
    bias_len: usize,
) -> NcStatus {
    guard(|| {
        let clf = &deref(clf, "classifier")?.0;
        copy_out(&row_major(&clf.weights), weights, weights_len)?;
        copy_out(clf.bias.as_slice(), bias, bias_len)
    })
}

/// # Safety
/// `clf` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_classifier_free(clf: *mut NcClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// # Safety
/// `pack` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_moments_compute(pack: *const NcPack, out: *mut *mut NcMoments) -> NcStatus {
    guard(|| {
        let m = compute_moments(&deref(pack, "pack")?.0)?;
        put(out, Box::into_raw(Box::new(NcMoments(m))), "out")
    })
}

/// Copy the global mean (`len >= p`).
///
/// # Safety
/// `m` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_moments_copy_global_mean(m: *const NcMoments, buf: *mut f64, len: usize) -> NcStatus {
    guard(|| copy_out(deref(m, "moments")?.0.global_mean.as_slice(), buf, len))
}

/// Copy a `p × p` covariance, row-major (`len >= p*p`).
///
/// # Safety
/// `m` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_moments_copy_covariance(
    m: *const NcMoments,
    which: NcCovariance,
    buf: *mut f64,
    len: usize,
) -> NcStatus {
    guard(|| {
        let m = &deref(m, "moments")?.0;
        let cov = match which {
            NcCovariance::Total => &m.sigma_total,
            NcCovariance::Between => &m.sigma_between,
            NcCovariance::Within => &m.sigma_within,
        };
        copy_out(&row_major(cov), buf, len)
    })
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_moments_free(m: *mut NcMoments) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Within-class variability Tr(Σ_W Σ_B†)/C. `rtol == 0` selects the default
/// pseudoinverse cutoff.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_nc1(m: *const NcMoments, rtol: f64, out: *mut f64) -> NcStatus {
    guard(|| {
        let m = &deref(m, "moments")?.0;
        let v = nc1_collapse(m, rtol_or_default(rtol, m.feature_dim())?)?;
        put(out, v, "out")
    })
}

/// Closed-form MSE-optimal linear classifier. `rtol == 0` selects the
/// default pseudoinverse cutoff.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_webb_lowe(m: *const NcMoments, rtol: f64, out: *mut *mut NcClassifier) -> NcStatus {
    guard(|| {
        let m = &deref(m, "moments")?.0;
        let clf = webb_lowe(m, rtol_or_default(rtol, m.feature_dim())?)?;
        put(out, Box::into_raw(Box::new(NcClassifier(clf))), "out")
    })
}

/// Squared Frobenius distance between the normalized classifier and the
/// normalized centered means.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_duality_gap(m: *const NcMoments, clf: *const NcClassifier, out: *mut f64) -> NcStatus {
    guard(|| {
        let v = duality_gap(&deref(m, "moments")?.0, &deref(clf, "classifier")?.0)?;
        put(out, v, "out")
    })
}

/// Fraction of `probe` rows on which the classifier and the nearest
/// class-center rule over `train`'s class means disagree.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nc_ncc_mismatch(
    clf: *const NcClassifier,
    train: *const NcMoments,
    probe: *const NcPack,
    out: *mut f64,
) -> NcStatus {
    guard(|| {
        let train = &deref(train, "train moments")?.0;
        let v = ncc_mismatch(
            &deref(clf, "classifier")?.0,
            &train.class_means,
            &deref(probe, "probe")?.0,
        )?;
        put(out, v, "out")
    })
}

/// Write the standard `C × C` simplex ETF into `buf` (`len >= C*C`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_standard_etf(num_classes: usize, buf: *mut f64, len: usize) -> NcStatus {
    guard(|| {
        let m = standard_etf(num_classes)?;
        copy_out(&row_major(&m), buf, len)
    })
}

/// Large-deviations exponent β of a `C × C` codec: codebook `codebook`
/// (codeword c is column c), decoder rows `decoder`, bias `bias`, all
/// row-major.
///
/// # Safety
/// Matrix buffers must hold `C*C` doubles, `bias` `C`, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_analytic_exponent(
    num_classes: usize,
    codebook: *const f64,
    decoder: *const f64,
    bias: *const f64,
    out: *mut f64,
) -> NcStatus {
    guard(|| {
        let n = checked_len(num_classes, num_classes)?;
        let m = DMatrix::from_row_slice(num_classes, num_classes, slice(codebook, n, "codebook")?);
        let w = DMatrix::from_row_slice(num_classes, num_classes, slice(decoder, n, "decoder")?);
        let b = DVector::from_column_slice(slice(bias, num_classes, "bias")?);
        let inst = CodecInstance::new(m, w, b, 1.0)?;
        put(out, analytic_exponent(&inst).beta, "out")
    })
}

/// Monte Carlo error rate of the simplex ETF codec at noise `sigma`.
/// `ci_halfwidth` is the 95% normal-approximation half-width.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_codec_simulate(
    num_classes: usize,
    sigma: f64,
    trials: u64,
    seed: u64,
    errors: *mut u64,
    error_rate: *mut f64,
    ci_halfwidth: *mut f64,
) -> NcStatus {
    guard(|| {
        let inst = CodecInstance::simplex(num_classes, sigma)?;
        let est = simulate_error_rate(&inst, trials, seed)?;
        put(errors, est.errors, "errors")?;
        put(error_rate, est.error_rate, "error_rate")?;
        put(ci_halfwidth, est.ci_halfwidth, "ci_halfwidth")
    })
}
