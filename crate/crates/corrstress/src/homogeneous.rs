//! Closed-form analysis of the stylised homogeneous portfolio.
//!
//! The homogeneous setup has m binary risk factors, n = 2^m securities
//! exhibiting every factor combination, equal volatilities and equal
//! weights. Portfolio variance, average correlation, sensitivities,
//! partial (core/peripheral) stresses and the Mahalanobis-constrained
//! worst case all admit closed forms, which double as the analytic oracle
//! for the numeric scenario search on explicit matrices.

use crate::error::{Error, Result};

/// Parameters of the homogeneous portfolio and of the distribution of its
/// factor-coefficient changes.
#[derive(Debug, Clone)]
pub struct HomogeneousSpec {
    factor_count: usize,
    sigma: f64,
    betas: Vec<f64>,
    sigma_beta: f64,
    rho_beta: f64,
}

impl HomogeneousSpec {
    pub fn new(
        factor_count: usize,
        sigma: f64,
        betas: Vec<f64>,
        sigma_beta: f64,
        rho_beta: f64,
    ) -> Result<Self> {
        if factor_count == 0 {
            return Err(Error::Domain("factor count must be >= 1".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("volatility must be > 0, got {sigma}")));
        }
        if betas.len() != factor_count {
            return Err(Error::Dimension(format!(
                "{} coefficients for {factor_count} factors",
                betas.len()
            )));
        }
        if betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Domain("coefficients must be nonnegative".into()));
        }
        if !(sigma_beta >= 0.0) {
            return Err(Error::Domain(format!(
                "coefficient volatility must be >= 0, got {sigma_beta}"
            )));
        }
        let rho_floor = if factor_count > 1 {
            -1.0 / (factor_count as f64 - 1.0)
        } else {
            f64::NEG_INFINITY
        };
        if !(rho_beta > rho_floor && rho_beta < 1.0) {
            return Err(Error::Domain(format!(
                "coefficient correlation must lie in ({rho_floor}, 1), got {rho_beta}"
            )));
        }
        Ok(HomogeneousSpec {
            factor_count,
            sigma,
            betas,
            sigma_beta,
            rho_beta,
        })
    }

    /// Spec with one shared coefficient for every factor.
    pub fn uniform(
        factor_count: usize,
        sigma: f64,
        beta: f64,
        sigma_beta: f64,
        rho_beta: f64,
    ) -> Result<Self> {
        HomogeneousSpec::new(
            factor_count,
            sigma,
            vec![beta; factor_count],
            sigma_beta,
            rho_beta,
        )
    }

    pub fn factor_count(&self) -> usize {
        self.factor_count
    }

    pub fn asset_count(&self) -> usize {
        1usize << self.factor_count
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn sigma_beta(&self) -> f64 {
        self.sigma_beta
    }

    pub fn rho_beta(&self) -> f64 {
        self.rho_beta
    }

    fn uniform_beta(&self) -> Result<f64> {
        let b0 = self.betas[0];
        if self.betas.iter().any(|&b| (b - b0).abs() > 1e-14) {
            return Err(Error::Invalid(
                "operation requires one shared coefficient across factors".into(),
            ));
        }
        Ok(b0)
    }
}

/// Portfolio variance `sigma^2 / n * prod_k (1 + e^{-b_k})`.
pub fn portfolio_variance(spec: &HomogeneousSpec) -> f64 {
    let n = spec.asset_count() as f64;
    let product: f64 = spec.betas.iter().map(|b| 1.0 + (-b).exp()).product();
    spec.sigma * spec.sigma / n * product
}

/// Average pairwise correlation `(prod_k (1 + e^{-b_k}) - 1) / (n - 1)`.
pub fn average_correlation(factor_count: usize, betas: &[f64]) -> Result<f64> {
    if factor_count == 0 || betas.len() != factor_count {
        return Err(Error::Dimension(format!(
            "{} coefficients for {factor_count} factors",
            betas.len()
        )));
    }
    let n = (1usize << factor_count) as f64;
    let product: f64 = betas.iter().map(|b| 1.0 + (-b).exp()).product();
    Ok((product - 1.0) / (n - 1.0))
}

/// Solves for the shared coefficient that produces a target average
/// correlation, by monotone bisection to 1e-10.
pub fn calibrate_beta(factor_count: usize, target_rho: f64) -> Result<f64> {
    if factor_count == 0 {
        return Err(Error::Domain("factor count must be >= 1".into()));
    }
    if !(target_rho > 0.0 && target_rho <= 1.0) {
        return Err(Error::Domain(format!(
            "target average correlation must lie in (0, 1], got {target_rho}"
        )));
    }
    if target_rho == 1.0 {
        return Ok(0.0);
    }
    let avg = |beta: f64| {
        average_correlation(factor_count, &vec![beta; factor_count]).expect("validated")
    };
    // Average correlation decreases monotonically in beta from 1 at 0.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while avg(hi) > target_rho {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if avg(mid) > target_rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which sensitivity of the portfolio variance to compute.
#[derive(Debug, Clone, Copy)]
pub enum Sensitivity {
    /// Partial derivative with respect to a single factor coefficient.
    Factor(usize),
    /// Total derivative when all coefficients share one value.
    Homogeneous,
}

/// Analytic derivative of the portfolio variance with respect to the
/// factor coefficients.
pub fn variance_sensitivity(spec: &HomogeneousSpec, which: Sensitivity) -> Result<f64> {
    let n = spec.asset_count() as f64;
    let s2 = spec.sigma * spec.sigma;
    match which {
        Sensitivity::Factor(l) => {
            if l >= spec.factor_count {
                return Err(Error::Dimension(format!(
                    "factor index {l} out of range for {} factors",
                    spec.factor_count
                )));
            }
            let rest: f64 = spec
                .betas
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != l)
                .map(|(_, b)| 1.0 + (-b).exp())
                .product();
            Ok(-s2 / n * (-spec.betas[l]).exp() * rest)
        }
        Sensitivity::Homogeneous => {
            let beta = spec.uniform_beta()?;
            let m = spec.factor_count as f64;
            Ok(-s2 / n * m * (1.0 + (-beta).exp()).powi(spec.factor_count as i32)
                / (1.0 + beta.exp()))
        }
    }
}

/// Portfolio variance when `core_count` of the coefficients are stressed
/// by `delta_beta` and the remaining ones move by their conditional
/// expectation `core_count * rho / ((core_count - 1) rho + 1) * delta_beta`.
pub fn stressed_variance(
    spec: &HomogeneousSpec,
    core_count: usize,
    delta_beta: f64,
) -> Result<f64> {
    let m = spec.factor_count;
    if core_count < 1 || core_count > m {
        return Err(Error::Dimension(format!(
            "core factor count {core_count} out of range 1..={m}"
        )));
    }
    let beta = spec.uniform_beta()?;
    let j = core_count as f64;
    let rho = spec.rho_beta;
    let peripheral_shift = j * rho / ((j - 1.0) * rho + 1.0) * delta_beta;
    let n = spec.asset_count() as f64;
    let core_term = (1.0 + (-(beta + delta_beta)).exp()).powi(core_count as i32);
    let peripheral_term =
        (1.0 + (-(beta + peripheral_shift)).exp()).powi((m - core_count) as i32);
    Ok(spec.sigma * spec.sigma / n * core_term * peripheral_term)
}

/// Worst-case shared coefficient within squared Mahalanobis radius `h`.
#[derive(Debug, Clone, Copy)]
pub struct WorstCaseBeta {
    /// The worst-case coefficient, truncated at zero if the closed form
    /// went negative.
    pub beta: f64,
    /// Raw closed-form value before truncation.
    pub unconstrained: f64,
    /// Set when the closed form was negative and got truncated.
    pub truncated: bool,
}

/// Closed-form worst case: `beta_bar - sqrt(h sigma_b^2 (1+(m-1)rho_b)/m)`.
///
/// The model requires nonnegative coefficients, so a negative solution is
/// truncated at zero and flagged.
pub fn worst_case_beta(
    beta_bar: f64,
    factor_count: usize,
    sigma_beta: f64,
    rho_beta: f64,
    radius_sq: f64,
) -> Result<WorstCaseBeta> {
    if factor_count == 0 {
        return Err(Error::Domain("factor count must be >= 1".into()));
    }
    if !(radius_sq >= 0.0) {
        return Err(Error::Domain(format!(
            "squared radius must be >= 0, got {radius_sq}"
        )));
    }
    let m = factor_count as f64;
    let raw = beta_bar
        - (radius_sq * sigma_beta * sigma_beta * (1.0 + (m - 1.0) * rho_beta) / m).sqrt();
    Ok(WorstCaseBeta {
        beta: raw.max(0.0),
        unconstrained: raw,
        truncated: raw < 0.0,
    })
}
