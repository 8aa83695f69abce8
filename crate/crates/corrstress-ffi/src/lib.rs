//! C ABI for the correlation stress engine.
//!
//! Conventions:
//! - Every fallible function returns a [`CsStatus`]; outputs are written
//!   through caller-provided pointers only on success.
//! - `cs_last_error_message` retrieves a thread-local description of the
//!   most recent failure.
//! - `CsModel` is an opaque handle created by `cs_model_new` and released
//!   by `cs_model_free`; matrices cross the boundary as row-major `double`
//!   buffers sized by the caller.
//!
//! The companion header `include/corrstress.h` is generated at build time
//! by cbindgen.

use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrstress::error::Error;
use corrstress::factor_model::{
    build_distances, calibrate_betas, BetaVector, CorrelationModel, DistanceMatrixSet,
    FactorExposure,
};
use corrstress::homogeneous;
use corrstress::numerics::{self, Probability};
use corrstress::portfolio_risk::PortfolioWeights;
use corrstress::scenario::{self, BetaDistribution, RiskMeasure, SearchConfig};
use corrstress::{credit, Result};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    CsStatusOk = 0,
    CsStatusNullArgument = 1,
    CsStatusDomain = 2,
    CsStatusDimension = 3,
    CsStatusRank = 4,
    CsStatusSingular = 5,
    CsStatusInsufficientHistory = 6,
    CsStatusNoConvergence = 7,
    CsStatusDegenerate = 8,
    CsStatusNumerical = 9,
    CsStatusParse = 10,
    CsStatusInvalid = 11,
    CsStatusIo = 12,
    CsStatusPanic = 13,
}

/// Return-distribution selector for VaR computations.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsRiskMeasure {
    CsRiskMeasureNormal = 0,
    CsRiskMeasureStudentT = 1,
    CsRiskMeasureJointStress = 2,
}

/// Scalar diagnostics of a worst-case search.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsSearchInfo {
    /// Portfolio variance at the optimum.
    pub variance: f64,
    /// Mahalanobis distance of the optimum from the scenario origin.
    pub mahalanobis: f64,
    /// Relative spread of the restart optima.
    pub restart_spread: f64,
    /// 1 when the optimum sits on the ellipsoid boundary.
    pub on_boundary: i32,
    /// 1 when the restarts agreed within tolerance.
    pub converged: i32,
    /// Objective evaluations spent.
    pub evaluations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(error: &Error) -> CsStatus {
    match error {
        Error::Domain(_) => CsStatus::CsStatusDomain,
        Error::Dimension(_) => CsStatus::CsStatusDimension,
        Error::Rank(_) => CsStatus::CsStatusRank,
        Error::Singular(_) => CsStatus::CsStatusSingular,
        Error::InsufficientHistory { .. } => CsStatus::CsStatusInsufficientHistory,
        Error::NoConvergence(_) => CsStatus::CsStatusNoConvergence,
        Error::Degenerate(_) => CsStatus::CsStatusDegenerate,
        Error::Numerical(_) => CsStatus::CsStatusNumerical,
        Error::Parse { .. } => CsStatus::CsStatusParse,
        Error::Invalid(_) => CsStatus::CsStatusInvalid,
        Error::Io(_) => CsStatus::CsStatusIo,
        Error::Stage { source, .. } => status_of(source),
    }
}

// Runs a fallible body behind the unwind barrier every entry point needs.
fn guarded<F: FnOnce() -> Result<()>>(body: F) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CsStatus::CsStatusOk,
        Ok(Err(e)) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            CsStatus::CsStatusPanic
        }
    }
}

fn null_error(name: &str) -> Error {
    Error::Invalid(format!("null pointer argument '{name}'"))
}

macro_rules! require_non_null {
    ($ptr:expr) => {
        if $ptr.is_null() {
            return Err(null_error(stringify!($ptr)));
        }
    };
}

/// Version string of the underlying engine; static storage, do not free.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copies the last error message (NUL-terminated, possibly truncated)
/// into `buffer` and returns the full message length in bytes.
///
/// # Safety
/// `buffer` must point to at least `capacity` writable bytes, or be null
/// (in which case only the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn cs_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
            // Guarantee termination even when truncating.
            *buffer.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

unsafe fn write_out(out: *mut f64, value: f64) {
    *out = value;
}

/// Inverse standard normal CDF.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_normal_quantile(p: f64, out: *mut f64) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let value = numerics::normal_quantile(Probability::new(p)?);
        write_out(out, value);
        Ok(())
    })
}

/// Inverse Student-t CDF.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_student_t_quantile(p: f64, nu: f64, out: *mut f64) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let value = numerics::student_t_quantile(Probability::new(p)?, nu)?;
        write_out(out, value);
        Ok(())
    })
}

/// Inverse chi-squared CDF.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_chi_square_quantile(p: f64, dof: u32, out: *mut f64) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let value = numerics::chi_square_quantile(Probability::new(p)?, dof)?;
        write_out(out, value);
        Ok(())
    })
}

/// Inverse CDF of an inverse-gamma variable with the given shape/scale.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_inverse_gamma_quantile(
    p: f64,
    shape: f64,
    scale: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let value = numerics::inverse_gamma_quantile(Probability::new(p)?, shape, scale)?;
        write_out(out, value);
        Ok(())
    })
}

/// Principal branch of the Lambert W function.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_lambert_w0(z: f64, out: *mut f64) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        write_out(out, numerics::lambert_w0(z)?);
        Ok(())
    })
}

/// Flat hazard rate from the credit triangle.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_credit_triangle(spread: f64, recovery: f64, out: *mut f64) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        write_out(out, credit::credit_triangle(spread, recovery)?);
        Ok(())
    })
}

/// Risky duration of a CDS under flat hazard and rate.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_rpv01(
    spread: f64,
    recovery: f64,
    maturity: f64,
    rate: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let quote = credit::CdsQuote::new(spread, recovery, maturity, rate)?;
        write_out(out, credit::rpv01(&quote)?);
        Ok(())
    })
}

/// Equivalent running spread of an (upfront, running) tranche quote.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_tranche_equivalent_spread(
    upfront: f64,
    running: f64,
    recovery: f64,
    maturity: f64,
    rate: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let quote = credit::TrancheQuote::new(
            0.0, 1.0, upfront, running, 0.0, 0.0, 0.0, recovery, maturity, rate,
        )?;
        write_out(out, credit::tranche_equivalent_spread(&quote)?.spread);
        Ok(())
    })
}

/// Tranche survival probability at maturity under the one-factor
/// Gaussian large-pool model with base correlations.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_tranche_survival(
    attachment: f64,
    detachment: f64,
    base_corr_attach: f64,
    base_corr_detach: f64,
    index_spread: f64,
    recovery: f64,
    maturity: f64,
    rate: f64,
    pool_size: usize,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let quote = credit::TrancheQuote::new(
            attachment,
            detachment,
            0.0,
            0.0,
            base_corr_attach,
            base_corr_detach,
            index_spread,
            recovery,
            maturity,
            rate,
        )?;
        write_out(out, credit::tranche_survival_at_maturity(&quote, pool_size)?);
        Ok(())
    })
}

/// Homogeneous-portfolio variance for a shared coefficient.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_homog_variance(
    factor_count: usize,
    sigma: f64,
    beta: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let spec = homogeneous::HomogeneousSpec::uniform(factor_count, sigma, beta, 1e-6, 0.0)?;
        write_out(out, homogeneous::portfolio_variance(&spec));
        Ok(())
    })
}

/// Average pairwise correlation of the homogeneous portfolio.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_homog_average_correlation(
    factor_count: usize,
    beta: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        let betas = vec![beta; factor_count];
        write_out(out, homogeneous::average_correlation(factor_count, &betas)?);
        Ok(())
    })
}

/// Shared coefficient hitting a target average correlation.
///
/// # Safety
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cs_homog_calibrate_beta(
    factor_count: usize,
    target_rho: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out);
        write_out(out, homogeneous::calibrate_beta(factor_count, target_rho)?);
        Ok(())
    })
}

/// Closed-form worst-case coefficient within squared radius `radius_sq`.
/// `out_truncated` receives 1 when the raw solution was negative and got
/// clamped to zero.
///
/// # Safety
/// `out_beta` and `out_truncated` must be valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn cs_homog_worst_case_beta(
    beta_bar: f64,
    factor_count: usize,
    sigma_beta: f64,
    rho_beta: f64,
    radius_sq: f64,
    out_beta: *mut f64,
    out_truncated: *mut i32,
) -> CsStatus {
    guarded(|| {
        require_non_null!(out_beta);
        require_non_null!(out_truncated);
        let wc = homogeneous::worst_case_beta(
            beta_bar,
            factor_count,
            sigma_beta,
            rho_beta,
            radius_sq,
        )?;
        write_out(out_beta, wc.beta);
        *out_truncated = wc.truncated as i32;
        Ok(())
    })
}

/// Opaque correlation model handle: per-factor distance matrices built
/// from instrument exposures.
pub struct CsModel {
    distances: DistanceMatrixSet,
}

impl CsModel {
    fn instrument_count(&self) -> usize {
        self.distances.instrument_count()
    }

    fn factor_count(&self) -> usize {
        self.distances.factor_count()
    }
}

/// Builds a model from a row-major `instrument_count x factor_count`
/// exposure matrix. On success `out_model` owns the handle; release it
/// with `cs_model_free`.
///
/// # Safety
/// `exposures` must point to `instrument_count * factor_count` doubles;
/// `out_model` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cs_model_new(
    exposures: *const f64,
    instrument_count: usize,
    factor_count: usize,
    normalise: bool,
    out_model: *mut *mut CsModel,
) -> CsStatus {
    guarded(|| {
        require_non_null!(exposures);
        require_non_null!(out_model);
        let flat = std::slice::from_raw_parts(exposures, instrument_count * factor_count);
        let rows = (0..instrument_count)
            .map(|i| {
                FactorExposure::new(flat[i * factor_count..(i + 1) * factor_count].to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let distances = build_distances(&rows, normalise)?;
        *out_model = Box::into_raw(Box::new(CsModel { distances }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer obtained from `cs_model_new` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const CsModel) -> Result<&'a CsModel> {
    model.as_ref().ok_or_else(|| null_error("model"))
}

/// Number of instruments behind the handle; zero for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from `cs_model_new`.
#[no_mangle]
pub unsafe extern "C" fn cs_model_instrument_count(model: *const CsModel) -> usize {
    model.as_ref().map_or(0, |m| m.instrument_count())
}

/// Number of risk factors behind the handle; zero for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from `cs_model_new`.
#[no_mangle]
pub unsafe extern "C" fn cs_model_factor_count(model: *const CsModel) -> usize {
    model.as_ref().map_or(0, |m| m.factor_count())
}

/// Fills `out` (row-major `n x n`) with the correlation matrix generated
/// by the coefficients.
///
/// # Safety
/// `betas` must hold `factor_count` doubles; `out` must hold
/// `instrument_count^2` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_model_correlation(
    model: *const CsModel,
    betas: *const f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        let model = model_ref(model)?;
        require_non_null!(betas);
        require_non_null!(out);
        let beta = BetaVector::new(
            std::slice::from_raw_parts(betas, model.factor_count()).to_vec(),
        )?;
        let corr = CorrelationModel::new(beta, model.distances.clone())?.matrix();
        let n = model.instrument_count();
        let dst = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = corr[(i, j)];
            }
        }
        Ok(())
    })
}

/// Least-squares coefficient calibration from a row-major empirical
/// correlation matrix (NaN entries are treated as unavailable).
///
/// # Safety
/// `empirical` must hold `instrument_count^2` doubles; `out_betas` must
/// hold `factor_count` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_model_calibrate(
    model: *const CsModel,
    empirical: *const f64,
    clip_eps: f64,
    out_betas: *mut f64,
) -> CsStatus {
    guarded(|| {
        let model = model_ref(model)?;
        require_non_null!(empirical);
        require_non_null!(out_betas);
        let n = model.instrument_count();
        let flat = std::slice::from_raw_parts(empirical, n * n);
        let matrix = nalgebra::DMatrix::from_fn(n, n, |i, j| flat[i * n + j]);
        let betas = calibrate_betas(&matrix, &model.distances, clip_eps)?;
        let dst = std::slice::from_raw_parts_mut(out_betas, model.factor_count());
        dst.copy_from_slice(betas.as_slice());
        Ok(())
    })
}

/// VaR of the portfolio under the correlation scenario `betas`.
/// `nu` is read for the Student-t and joint measures, `vol_alpha` for the
/// joint measure only.
///
/// # Safety
/// `weights`/`vols` must hold `instrument_count` doubles each, `betas`
/// `factor_count` doubles, and `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cs_model_scenario_var(
    model: *const CsModel,
    weights: *const f64,
    portfolio_value: f64,
    vols: *const f64,
    betas: *const f64,
    measure: CsRiskMeasure,
    alpha: f64,
    nu: f64,
    vol_alpha: f64,
    out: *mut f64,
) -> CsStatus {
    guarded(|| {
        let model = model_ref(model)?;
        require_non_null!(weights);
        require_non_null!(vols);
        require_non_null!(betas);
        require_non_null!(out);
        let n = model.instrument_count();
        let weights = PortfolioWeights::new(
            std::slice::from_raw_parts(weights, n).to_vec(),
            portfolio_value,
        )?;
        let vols = std::slice::from_raw_parts(vols, n);
        let beta = BetaVector::new(
            std::slice::from_raw_parts(betas, model.factor_count()).to_vec(),
        )?;
        let alpha = Probability::new(alpha)?;
        let measure = match measure {
            CsRiskMeasure::CsRiskMeasureNormal => RiskMeasure::Normal { alpha },
            CsRiskMeasure::CsRiskMeasureStudentT => RiskMeasure::StudentT { alpha, nu },
            CsRiskMeasure::CsRiskMeasureJointStress => RiskMeasure::JointStress {
                alpha,
                nu,
                vol_alpha: Probability::new(vol_alpha)?,
            },
        };
        let value = scenario::scenario_var(&weights, vols, &model.distances, &beta, measure)?;
        write_out(out, value);
        Ok(())
    })
}

/// Worst-case coefficient search over the Mahalanobis ellipsoid (pass
/// `radius_sq = INFINITY` for the orthant-only search). The optimum is
/// written to `out_betas` and scalar diagnostics to `out_info`.
/// `restarts = 0` selects the default annealing budget.
///
/// # Safety
/// `weights`/`vols` must hold `instrument_count` doubles, `mean`
/// `factor_count` doubles, `cov` `factor_count^2` doubles, `out_betas`
/// `factor_count` writable doubles, and `out_info` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cs_model_worst_case(
    model: *const CsModel,
    weights: *const f64,
    portfolio_value: f64,
    vols: *const f64,
    mean: *const f64,
    cov: *const f64,
    radius_sq: f64,
    seed: u64,
    restarts: u32,
    out_betas: *mut f64,
    out_info: *mut CsSearchInfo,
) -> CsStatus {
    guarded(|| {
        let model = model_ref(model)?;
        require_non_null!(weights);
        require_non_null!(vols);
        require_non_null!(mean);
        require_non_null!(cov);
        require_non_null!(out_betas);
        require_non_null!(out_info);
        let n = model.instrument_count();
        let m = model.factor_count();
        let weights = PortfolioWeights::new(
            std::slice::from_raw_parts(weights, n).to_vec(),
            portfolio_value,
        )?;
        let vols = std::slice::from_raw_parts(vols, n);
        let mean = nalgebra::DVector::from_column_slice(std::slice::from_raw_parts(mean, m));
        let cov_flat = std::slice::from_raw_parts(cov, m * m);
        let cov = nalgebra::DMatrix::from_fn(m, m, |i, j| cov_flat[i * m + j]);
        let dist = BetaDistribution::new(mean, cov)?;
        let mut config = SearchConfig {
            seed,
            ..SearchConfig::default()
        };
        if restarts > 0 {
            config.restarts = restarts as usize;
        }
        let outcome = scenario::worst_case_search(
            &weights,
            vols,
            &model.distances,
            &dist,
            radius_sq,
            &config,
        )?;
        std::slice::from_raw_parts_mut(out_betas, m)
            .copy_from_slice(outcome.scenario.beta.as_slice());
        *out_info = CsSearchInfo {
            variance: outcome.variance,
            mahalanobis: outcome.scenario.mahalanobis,
            restart_spread: outcome.restart_spread,
            on_boundary: outcome.on_boundary as i32,
            converged: outcome.converged as i32,
            evaluations: outcome.evaluations,
        };
        Ok(())
    })
}
