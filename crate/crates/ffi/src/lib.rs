//! C ABI over `bcast`.
//!
//! Every fallible function returns a [`BcastStatus`]; on failure the message
//! is available from [`bcast_last_error`] on the same thread until the next
//! failing call. Models are opaque [`BcastModel`] handles released with
//! [`bcast_model_free`]. Arrays are passed as pointer plus length and are
//! never retained.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bcast::data::{prepare, records_from_values, Subset};
use bcast::losses::{gaussian_nll, kl_gaussian, GaussianPrediction};
use bcast::metrics::{self, IntervalForecast};
use bcast::pipeline::{build_model, count_params, forecast_with_pis, Model, ModelConfig, ModelId};
use bcast::serialize::{load_model, save_model};
use bcast::tensor::{RngState, Tensor};
use bcast::train::TrainConfig;
use bcast::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Config = 4,
    Divergence = 5,
    Io = 6,
    Format = 7,
    NotFound = 8,
    Panic = 9,
}

/// Opaque trained or loaded model.
pub struct BcastModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> BcastStatus {
    match e {
        Error::Dimension { .. } | Error::Contract(_) | Error::Domain(_) => BcastStatus::InvalidArgument,
        Error::Data(_) => BcastStatus::Data,
        Error::Config(_) => BcastStatus::Config,
        Error::Divergence { .. } => BcastStatus::Divergence,
        Error::Io(_) => BcastStatus::Io,
        Error::Format(_) => BcastStatus::Format,
        Error::NotFound(_) => BcastStatus::NotFound,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = Result<T, Fail>;

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> BcastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BcastStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BcastStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            BcastStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn out_slice<'a>(p: *mut f64, n: usize) -> Option<&'a mut [f64]> {
    if p.is_null() || n == 0 {
        return None;
    }
    Some(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn string(p: *const c_char, what: &'static str) -> FfiResult<String> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Fail::Lib(Error::contract(format!("{what} is not UTF-8"))))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn bcast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `y_hat` and `y` must point to `n` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_rmse(y_hat: *const f64, y: *const f64, n: usize, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::rmse(slice(y_hat, n, "y_hat")?, slice(y, n, "y")?)?;
        Ok(())
    })
}

/// # Safety
/// As for `bcast_rmse`.
#[no_mangle]
pub unsafe extern "C" fn bcast_mae(y_hat: *const f64, y: *const f64, n: usize, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::mae(slice(y_hat, n, "y_hat")?, slice(y, n, "y")?)?;
        Ok(())
    })
}

/// # Safety
/// As for `bcast_rmse`.
#[no_mangle]
pub unsafe extern "C" fn bcast_r_score(y_hat: *const f64, y: *const f64, n: usize, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::r_score(slice(y_hat, n, "y_hat")?, slice(y, n, "y")?)?;
        Ok(())
    })
}

/// # Safety
/// As for `bcast_rmse`.
#[no_mangle]
pub unsafe extern "C" fn bcast_brier(f: *const f64, y: *const f64, n: usize, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = metrics::brier(slice(f, n, "f")?, slice(y, n, "y")?)?;
        Ok(())
    })
}

/// Pinball loss of one quantile forecast `q` at level `tau` for observation `y`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_pinball(y: f64, q: f64, tau: f64, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = bcast::losses::pinball_training_loss(y, q, tau)?;
        Ok(())
    })
}

/// Mean Winkler score of intervals `[lb, ub]` at miscoverage `gamma`.
///
/// # Safety
/// `lb`, `ub` and `y` must point to `n` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_winkler(
    lb: *const f64,
    ub: *const f64,
    y: *const f64,
    n: usize,
    gamma: f64,
    out_value: *mut f64,
) -> BcastStatus {
    guard(|| {
        let iv = IntervalForecast::new(slice(lb, n, "lb")?.to_vec(), slice(ub, n, "ub")?.to_vec(), gamma)?;
        *out(out_value, "out_value")? = metrics::winkler(&iv, slice(y, n, "y")?)?;
        Ok(())
    })
}

/// `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_kl_gaussian(
    mu_q: f64,
    sigma_q: f64,
    mu_p: f64,
    sigma_p: f64,
    out_value: *mut f64,
) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = kl_gaussian(mu_q, sigma_q, mu_p, sigma_p)?;
        Ok(())
    })
}

/// Negative log-likelihood of `y` under `N(mean, std²)`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_gaussian_nll(mean: f64, std: f64, y: f64, out_value: *mut f64) -> BcastStatus {
    guard(|| {
        *out(out_value, "out_value")? = gaussian_nll(GaussianPrediction::new(mean, std)?, y)?;
        Ok(())
    })
}

/// Builds an untrained model. `model_id` is `"m1"`..`"m8"`; `config_json`
/// may be NULL for defaults or a JSON object of training settings.
///
/// # Safety
/// Strings must be NUL-terminated; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_new(
    model_id: *const c_char,
    config_json: *const c_char,
    out_model: *mut *mut BcastModel,
) -> BcastStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let id: ModelId = string(model_id, "model_id")?.parse()?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(&string(config_json, "config_json")?).map_err(Error::from)?
        };
        let mut rng = RngState::new(cfg.seed);
        let inner = build_model(&ModelConfig::new(id, &cfg), &cfg, &mut rng)?;
        *slot = Box::into_raw(Box::new(BcastModel { inner }));
        Ok(())
    })
}

/// Trains on a half-hourly series in original units: the first `ratio` of
/// windows train the model (with its internal validation split), the rest
/// are ignored. Re-training starts from the current weights.
///
/// # Safety
/// `model` must be a live handle; `series` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_train(
    model: *mut BcastModel,
    series: *const f64,
    n: usize,
    ratio: f64,
) -> BcastStatus {
    guard(|| {
        let m = &mut out(model, "model")?.inner;
        let values = slice(series, n, "series")?;
        let records = records_from_values(bcast::synth::start_time(), values);
        let (train, _) = prepare(&records, m.config.lags, ratio, Subset::Full)?;
        let mut rng = RngState::new(m.train.seed);
        m.fit(&train, &mut rng)?;
        Ok(())
    })
}

/// Loads `<stem>.bin` and `<stem>.json`.
///
/// # Safety
/// `stem` must be NUL-terminated; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_load(stem: *const c_char, out_model: *mut *mut BcastModel) -> BcastStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let inner = load_model(string(stem, "stem")?)?;
        *slot = Box::into_raw(Box::new(BcastModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `stem` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_save(model: *const BcastModel, stem: *const c_char) -> BcastStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        save_model(&m.inner, string(stem, "stem")?)?;
        Ok(())
    })
}

/// Number of lags each input window must have, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_lags(model: *const BcastModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.lags)
}

/// Trainable scalar count; `vae` (optional) receives the part owned by the
/// VAE, which `total` includes.
///
/// # Safety
/// `model` must be a live handle; `total` writable; `vae` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_param_count(
    model: *const BcastModel,
    total: *mut usize,
    vae: *mut usize,
) -> BcastStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let pc = count_params(&m.inner);
        *out(total, "total")? = pc.total;
        if let Some(v) = vae.as_mut() {
            *v = pc.vae;
        }
        Ok(())
    })
}

/// Probabilistic forecast for `n` row-major windows of `lags` values in
/// original units. Every output array holds `n` doubles and may be NULL to
/// skip it. Intervals are the central 50% and 90% predictive intervals.
///
/// # Safety
/// `model` must be a live handle; `windows` must point to `n * lags`
/// doubles; non-NULL outputs must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_forecast(
    model: *const BcastModel,
    windows: *const f64,
    n: usize,
    lags: usize,
    mc_samples: usize,
    seed: u64,
    mean: *mut f64,
    std: *mut f64,
    lb50: *mut f64,
    ub50: *mut f64,
    lb90: *mut f64,
    ub90: *mut f64,
) -> BcastStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.inner;
        if lags != m.config.lags {
            return Err(Error::contract(format!("model expects {} lags, got {lags}", m.config.lags)).into());
        }
        let raw = slice(windows, n * lags, "windows")?;
        let x = Tensor::matrix(n, lags, m.scaler.apply_all(raw))?;
        let fc = forecast_with_pis(m, &x, mc_samples, &mut RngState::new(seed), &[0.5, 0.9])?;
        let p50 = fc.interval(0.5).expect("requested");
        let p90 = fc.interval(0.9).expect("requested");
        let columns: [(*mut f64, &[f64]); 6] = [
            (mean, &fc.mean),
            (std, &fc.std),
            (lb50, &p50.lb),
            (ub50, &p50.ub),
            (lb90, &p90.lb),
            (ub90, &p90.ub),
        ];
        for (dst, src) in columns {
            if let Some(d) = out_slice(dst, n) {
                d.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Releases a handle; NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcast_model_free(model: *mut BcastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(status_of(&Error::data("x")), BcastStatus::Data);
        assert_eq!(status_of(&Error::Divergence { epoch: 1, loss: f64::NAN }), BcastStatus::Divergence);
        assert_eq!(guard(|| Err(Fail::Null("p"))), BcastStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(bcast_last_error()) };
        assert!(msg.to_str().unwrap().contains("null pointer"));
        assert_eq!(guard(|| panic!("boom")), BcastStatus::Panic);
    }
}
