//! C ABI over the forest, prediction and importance pipelines.
//!
//! Conventions:
//! * every fallible function returns a [`QrfStatus`]; `QRF_STATUS_OK` is 0;
//! * on failure a message is available from [`qrf_last_error`] on the same
//!   thread until the next failing call;
//! * matrices are dense, row-major `double` arrays;
//! * models are opaque handles released with [`qrf_model_free`];
//! * panics never cross the boundary and are reported as `QRF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use qrf_vimp::forest::{default_names, fit_forest, ModelDocument};
use qrf_vimp::quantile::predict_rows;
use qrf_vimp::vimp::{cross_fitted_vimp, FeatureSubset, VimpOptions};
use qrf_vimp::{Dataset, Error, ForestConfig, QuantileLevel, Subsample};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Data = 4,
    DimensionMismatch = 5,
    FoldLeakage = 6,
    Numerical = 7,
    CorruptModel = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for QrfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Schema(_) => QrfStatus::InvalidInput,
            Error::Config(_) => QrfStatus::Config,
            Error::Data(_) | Error::MalformedCsv(_) | Error::NonNumeric { .. } => QrfStatus::Data,
            Error::DimensionMismatch { .. } => QrfStatus::DimensionMismatch,
            Error::FoldLeakage(_) => QrfStatus::FoldLeakage,
            Error::Numerical(_) => QrfStatus::Numerical,
            Error::CorruptModel(_) | Error::Json(_) => QrfStatus::CorruptModel,
            Error::Io { .. } => QrfStatus::Io,
        }
    }
}

/// Forest settings. Obtain defaults from [`qrf_forest_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrfForestParams {
    pub num_trees: usize,
    /// Subsample size; 0 selects `round(n^beta)`.
    pub subsample_size: usize,
    /// Subsampling rate, used when `subsample_size` is 0.
    pub beta: f64,
    pub alpha: f64,
    pub min_leaf_est: usize,
    /// Candidate features per split; 0 selects `ceil(sqrt(p))`.
    pub mtry: usize,
    pub seed: u64,
    pub tau: f64,
}

/// One prediction with its pointwise interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QrfPrediction {
    pub q_hat: f64,
    pub eta_hat: f64,
    pub f_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Importance of a feature subset with raw and bias-corrected intervals.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QrfVimpResult {
    pub v_hat: f64,
    pub sigma_s_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub c_hat: f64,
    pub v_tilde: f64,
    pub ci_corrected_low: f64,
    pub ci_corrected_high: f64,
    pub beta_used: f64,
    pub n_eval: usize,
    pub n_train: usize,
    pub subsample_size: usize,
}

/// Opaque fitted model together with its training responses.
pub struct QrfModel {
    doc: ModelDocument,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(QrfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(QrfStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QrfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QrfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QrfStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `x` must hold `n * p` values and `y` must hold `n` values.
unsafe fn dataset(x: *const f64, y: *const f64, n: usize, p: usize) -> Result<Dataset, Failure> {
    let len = n
        .checked_mul(p)
        .ok_or_else(|| Failure(QrfStatus::InvalidInput, "n * p overflows".into()))?;
    let x = slice(x, len, "x")?.to_vec();
    let y = slice(y, n, "y")?.to_vec();
    Ok(Dataset::new(x, p, y, default_names(p))?)
}

fn config(params: &QrfForestParams) -> Result<ForestConfig, Failure> {
    let subsample = if params.subsample_size > 0 {
        Subsample::Size(params.subsample_size)
    } else {
        Subsample::Rate(params.beta)
    };
    Ok(ForestConfig {
        num_trees: params.num_trees,
        subsample,
        alpha: params.alpha,
        min_leaf_est: params.min_leaf_est,
        mtry: (params.mtry > 0).then_some(params.mtry),
        seed: params.seed,
        tau: QuantileLevel::new(params.tau)
            .map_err(|e| Failure(QrfStatus::Config, e.to_string()))?,
    })
}

/// # Safety
/// `path` must be null or a nul-terminated string.
unsafe fn path<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(QrfStatus::InvalidInput, "path is not UTF-8".into()))
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qrf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn qrf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Library defaults: 1000 trees, `beta = 0.5`, `alpha = 0.05`,
/// `min_leaf_est = 5`, automatic `mtry`, seed 0, median.
#[no_mangle]
pub extern "C" fn qrf_forest_params_default() -> QrfForestParams {
    let d = ForestConfig::default();
    let beta = match d.subsample {
        Subsample::Rate(b) => b,
        Subsample::Size(_) => 0.5,
    };
    QrfForestParams {
        num_trees: d.num_trees,
        subsample_size: 0,
        beta,
        alpha: d.alpha,
        min_leaf_est: d.min_leaf_est,
        mtry: d.mtry.unwrap_or(0),
        seed: d.seed,
        tau: d.tau.value(),
    }
}

/// Fits a forest on `n` rows of `p` features.
///
/// # Safety
/// `x` must hold `n * p` row-major values, `y` must hold `n` values, `params`
/// must point to a valid struct and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    params: *const QrfForestParams,
    out: *mut *mut QrfModel,
) -> QrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let data = dataset(x, y, n, p)?;
        let model = fit_forest(&data, &config(params)?)?;
        let doc = ModelDocument::new(model, &data)?;
        *out = Box::into_raw(Box::new(QrfModel { doc }));
        Ok(())
    })
}

/// Loads a model written by [`qrf_model_save`] or the `fit` command.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_load(
    path_: *const c_char,
    out: *mut *mut QrfModel,
) -> QrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let doc = ModelDocument::load(path(path_)?)?;
        *out = Box::into_raw(Box::new(QrfModel { doc }));
        Ok(())
    })
}

/// Writes the model as versioned JSON.
///
/// # Safety
/// `model` must come from this library and `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_save(model: *const QrfModel, path_: *const c_char) -> QrfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        Ok(model.doc.save(path(path_)?)?)
    })
}

/// Number of features the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_dim(model: *const QrfModel) -> usize {
    model.as_ref().map_or(0, |m| m.doc.model.dim())
}

/// Number of training rows, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_n_train(model: *const QrfModel) -> usize {
    model.as_ref().map_or(0, |m| m.doc.model.n_train())
}

/// Predicts `m` query rows of `p` features with intervals at `level`.
///
/// # Safety
/// `x` must hold `m * p` values and `out` must have room for `m` results.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_predict(
    model: *const QrfModel,
    x: *const f64,
    m: usize,
    p: usize,
    level: f64,
    out: *mut QrfPrediction,
) -> QrfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dim = model.doc.model.dim();
        if p != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p,
            }
            .into());
        }
        if m == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let queries = dataset(x, vec![0.0; m].as_ptr(), m, p)?;
        let preds = predict_rows(&model.doc.model, &model.doc.responses, &queries, level)?;
        let out = std::slice::from_raw_parts_mut(out, m);
        for (o, q) in out.iter_mut().zip(preds) {
            *o = QrfPrediction {
                q_hat: q.q_hat,
                eta_hat: q.eta_hat,
                f_hat: q.f_hat,
                ci_low: q.ci_low,
                ci_high: q.ci_high,
            };
        }
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qrf_model_free(model: *mut QrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cross-fitted importance of the features listed in `subset` (0-based
/// column indices, `subset_len` may be 0). The fold assignment is derived
/// from `params.seed`.
///
/// # Safety
/// `x` must hold `n * p` values, `y` must hold `n` values, `subset` must
/// hold `subset_len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qrf_vimp(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    subset: *const usize,
    subset_len: usize,
    params: *const QrfForestParams,
    level: f64,
    out: *mut QrfVimpResult,
) -> QrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let data = dataset(x, y, n, p)?;
        let subset = FeatureSubset::new(slice(subset, subset_len, "subset")?.to_vec())?;
        subset.validate(p)?;
        let cfg = config(params)?;
        let options = VimpOptions {
            level,
            ..VimpOptions::seeded_from(cfg.seed)
        };
        let r = cross_fitted_vimp(&data, &subset, &cfg, &options)?.report;
        *out = QrfVimpResult {
            v_hat: r.v_hat,
            sigma_s_hat: r.sigma_s_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            c_hat: r.c_hat,
            v_tilde: r.v_tilde,
            ci_corrected_low: r.ci_corrected_low,
            ci_corrected_high: r.ci_corrected_high,
            beta_used: r.beta_used,
            n_eval: r.n_eval,
            n_train: r.n_train,
            subsample_size: r.subsample_size,
        };
        Ok(())
    })
}
