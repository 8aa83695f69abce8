//! Covariance assembly and variance-covariance value-at-risk.
//!
//! VaR figures are returned as positive loss magnitudes for the stated
//! confidence level. Three return distributions are supported: normal,
//! Student t (via its normal variance-mixture decomposition), and the
//! jointly stressed case where the inverse-gamma mixing variable is fixed
//! at a quantile, scaling volatility on top of whatever correlation
//! scenario is embedded in the covariance matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{self, Probability};

/// Signed percentage portfolio weights plus the current position value.
#[derive(Debug, Clone)]
pub struct PortfolioWeights {
    weights: DVector<f64>,
    value: f64,
}

impl PortfolioWeights {
    pub fn new(weights: Vec<f64>, value: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !value.is_finite() {
            return Err(Error::Invalid("weights and value must be finite".into()));
        }
        Ok(PortfolioWeights {
            weights: DVector::from_vec(weights),
            value,
        })
    }

    /// Equally weighted portfolio of `n` assets with position value `value`.
    pub fn equal(n: usize, value: f64) -> Self {
        PortfolioWeights {
            weights: DVector::from_element(n, 1.0 / n as f64),
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Symmetric covariance matrix of per-horizon returns.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension("covariance matrix must be square".into()));
        }
        let scale = matrix.amax().max(1e-300);
        for i in 0..matrix.nrows() {
            if matrix[(i, i)] < 0.0 {
                return Err(Error::Invalid(format!(
                    "negative variance on diagonal entry {i}"
                )));
            }
            for j in (i + 1)..matrix.ncols() {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Invalid("covariance matrix must be symmetric".into()));
                }
            }
        }
        Ok(CovarianceMatrix { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Smallest eigenvalue, for positive-semi-definiteness diagnostics.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Assembles `cov_ij = vol_i * vol_j * corr_ij`.
pub fn covariance(corr: &DMatrix<f64>, vols: &[f64]) -> Result<CovarianceMatrix> {
    let n = corr.nrows();
    if corr.ncols() != n || vols.len() != n {
        return Err(Error::Dimension(format!(
            "correlation is {}x{}, {} volatilities",
            corr.nrows(),
            corr.ncols(),
            vols.len()
        )));
    }
    if vols.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("volatilities must be finite and >= 0".into()));
    }
    let mut cov = corr.clone();
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] *= vols[i] * vols[j];
        }
    }
    CovarianceMatrix::new(cov)
}

/// Portfolio variance w' * cov * w, clamping round-off negatives to zero.
pub fn portfolio_variance(weights: &PortfolioWeights, cov: &CovarianceMatrix) -> Result<f64> {
    if weights.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "{} weights vs {}x{} covariance",
            weights.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let q = (weights.weights().transpose() * cov.matrix() * weights.weights())[(0, 0)];
    if q < -1e-12 {
        return Err(Error::Numerical(format!(
            "quadratic form is negative beyond tolerance: {q}"
        )));
    }
    Ok(q.max(0.0))
}

fn check_var_alpha(alpha: Probability) -> Result<f64> {
    let a = alpha.value();
    if a <= 0.5 {
        return Err(Error::Domain(format!(
            "VaR confidence level must exceed 0.5, got {a}"
        )));
    }
    Ok(a)
}

/// Normal-distribution VaR: quantile times current value times portfolio
/// standard deviation, reported as a positive loss.
pub fn var_normal(
    weights: &PortfolioWeights,
    cov: &CovarianceMatrix,
    alpha: Probability,
) -> Result<f64> {
    check_var_alpha(alpha)?;
    let z = numerics::normal_quantile(alpha);
    Ok(z * weights.value().abs() * portfolio_variance(weights, cov)?.sqrt())
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 2.0) {
        return Err(Error::Domain(format!(
            "degrees of freedom must exceed 2 for a finite covariance, got {nu}"
        )));
    }
    Ok(())
}

/// Student-t VaR. The dispersion matrix of the t-distribution is the
/// covariance scaled by (nu-2)/nu, which the quantile picks up as a
/// square-root factor.
pub fn var_t(
    weights: &PortfolioWeights,
    cov: &CovarianceMatrix,
    alpha: Probability,
    nu: f64,
) -> Result<f64> {
    check_var_alpha(alpha)?;
    check_nu(nu)?;
    let t = numerics::student_t_quantile(alpha, nu)?;
    let scale = ((nu - 2.0) / nu).sqrt();
    Ok(t * scale * weights.value().abs() * portfolio_variance(weights, cov)?.sqrt())
}

/// Joint correlation/volatility stress VaR: normal quantile with the
/// dispersion scaled by the vol_alpha-quantile of the inverse-gamma mixing
/// variable. Any correlation stress enters through `cov` itself.
pub fn var_joint_stress(
    weights: &PortfolioWeights,
    cov: &CovarianceMatrix,
    alpha: Probability,
    nu: f64,
    vol_alpha: Probability,
) -> Result<f64> {
    check_var_alpha(alpha)?;
    check_nu(nu)?;
    let q = numerics::inverse_gamma_quantile(vol_alpha, 0.5 * nu, 0.5 * nu)?;
    let z = numerics::normal_quantile(alpha);
    let scale = (q * (nu - 2.0) / nu).sqrt();
    Ok(z * scale * weights.value().abs() * portfolio_variance(weights, cov)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_model::{build_distances, BetaVector, CorrelationModel, FactorExposure};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prob(p: f64) -> Probability {
        Probability::new(p).unwrap()
    }

    fn homogeneous_cov(m: usize, beta: f64, annual_vol: f64) -> CovarianceMatrix {
        let exposures: Vec<FactorExposure> = (0..1usize << m)
            .map(|i| {
                FactorExposure::new((0..m).map(|k| ((i >> k) & 1) as f64).collect()).unwrap()
            })
            .collect();
        let d = build_distances(&exposures, true).unwrap();
        let corr = CorrelationModel::new(BetaVector::homogeneous(m, beta).unwrap(), d)
            .unwrap()
            .matrix();
        let daily = annual_vol / 250.0_f64.sqrt();
        covariance(&corr, &vec![daily; 1 << m]).unwrap()
    }

    #[test]
    fn identity_correlation_gives_diagonal_covariance() {
        let corr = DMatrix::identity(3, 3);
        let cov = covariance(&corr, &[0.1, 0.2, 0.3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected: f64 = if i == j { [0.1_f64, 0.2, 0.3][i].powi(2) } else { 0.0 };
                assert!((cov.matrix()[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn perfect_correlation_gives_rank_one() {
        let corr = DMatrix::from_element(4, 4, 1.0);
        let cov = covariance(&corr, &[0.2; 4]).unwrap();
        let eigs = cov.matrix().clone().symmetric_eigen().eigenvalues;
        let positive = eigs.iter().filter(|&&e| e > 1e-12).count();
        assert_eq!(positive, 1);
    }

    #[test]
    fn random_covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..=8);
            // Random PSD correlation via A A' normalised to unit diagonal.
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0_f64..1.0));
            let g = &a * a.transpose();
            let mut corr = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    corr[(i, j)] = g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt();
                }
            }
            let vols: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
            let cov = covariance(&corr, &vols).unwrap();
            assert!(cov.min_eigenvalue() >= -1e-10);
        }
    }

    #[test]
    fn covariance_rejects_dimension_mismatch() {
        let corr = DMatrix::identity(3, 3);
        assert!(matches!(
            covariance(&corr, &[0.1, 0.2]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn base_var_matches_homogeneous_reference_value() {
        // 32 assets, five binary factors, beta 0.5204 (average correlation
        // 0.30), 25% annual vol on a 250-day year, one-day 99% VaR ~ 2.09%.
        let cov = homogeneous_cov(5, 0.5204, 0.25);
        let w = PortfolioWeights::equal(32, 1.0);
        let var = var_normal(&w, &cov, prob(0.99)).unwrap();
        assert!((var - 0.0209).abs() < 1e-4, "VaR {var}");
    }

    #[test]
    fn stressed_var_matches_homogeneous_reference_value() {
        let cov = homogeneous_cov(5, 0.2361, 0.25);
        let w = PortfolioWeights::equal(32, 1.0);
        let var = var_normal(&w, &cov, prob(0.99)).unwrap();
        assert!((var - 0.0279).abs() < 1e-4, "VaR {var}");

        let base = var_normal(
            &w,
            &homogeneous_cov(5, 0.5204, 0.25),
            prob(0.99),
        )
        .unwrap();
        let change = var / base - 1.0;
        assert!((change - 0.33).abs() < 0.01, "change {change}");
    }

    #[test]
    fn var_vanishes_at_the_median() {
        let cov = homogeneous_cov(2, 0.4, 0.25);
        let w = PortfolioWeights::equal(4, 1.0);
        let var = var_normal(&w, &cov, prob(0.5 + 1e-12)).unwrap();
        assert!(var.abs() < 1e-9);
        assert!(var_normal(&w, &cov, prob(0.4)).is_err());
    }

    #[test]
    fn t_var_converges_to_normal_var() {
        let cov = homogeneous_cov(3, 0.5, 0.25);
        let w = PortfolioWeights::equal(8, 2.5e6);
        let normal = var_normal(&w, &cov, prob(0.99)).unwrap();
        let t = var_t(&w, &cov, prob(0.99), 1e6).unwrap();
        assert!((t / normal - 1.0).abs() < 1e-3);
    }

    #[test]
    fn t_var_ratio_matches_reference_value() {
        // nu = 13.5, alpha = 0.99: ratio of t-VaR to VaR ~ 354.98 / 339.32.
        let cov = homogeneous_cov(4, 0.6, 0.25);
        let w = PortfolioWeights::equal(16, 1.0);
        let normal = var_normal(&w, &cov, prob(0.99)).unwrap();
        let t = var_t(&w, &cov, prob(0.99), 13.5).unwrap();
        let ratio = t / normal;
        assert!((ratio - 1.0462).abs() < 0.002, "ratio {ratio}");
    }

    #[test]
    fn t_var_ratio_nu3_matches_quantile_composition() {
        let cov = homogeneous_cov(2, 0.4, 0.25);
        let w = PortfolioWeights::equal(4, 1.0);
        let normal = var_normal(&w, &cov, prob(0.99)).unwrap();
        let t = var_t(&w, &cov, prob(0.99), 3.0).unwrap();
        let expected = crate::numerics::student_t_quantile(prob(0.99), 3.0).unwrap()
            * (1.0_f64 / 3.0).sqrt()
            / crate::numerics::normal_quantile(prob(0.99));
        assert!((t / normal - expected).abs() < 1e-12);
    }

    #[test]
    fn t_var_rejects_small_nu() {
        let cov = homogeneous_cov(2, 0.4, 0.25);
        let w = PortfolioWeights::equal(4, 1.0);
        assert!(var_t(&w, &cov, prob(0.99), 2.0).is_err());
        assert!(var_joint_stress(&w, &cov, prob(0.99), 1.5, prob(0.9)).is_err());
    }

    #[test]
    fn joint_stress_at_mean_mixing_value_recovers_normal_var() {
        // When the mixing quantile equals E[V] = nu/(nu-2), the scaling
        // factors cancel and the joint-stress VaR is the plain normal VaR.
        let nu = 13.5;
        let cov = homogeneous_cov(3, 0.5, 0.25);
        let w = PortfolioWeights::equal(8, 1.0);
        let q_mean = nu / (nu - 2.0);
        let alpha_tilde =
            crate::numerics::inverse_gamma_cdf(q_mean, 0.5 * nu, 0.5 * nu).unwrap();
        let joint =
            var_joint_stress(&w, &cov, prob(0.99), nu, prob(alpha_tilde)).unwrap();
        let normal = var_normal(&w, &cov, prob(0.99)).unwrap();
        assert!((joint / normal - 1.0).abs() < 1e-9, "ratio {}", joint / normal);
    }

    #[test]
    fn joint_stress_identity_against_normal_var() {
        // output / var_normal = sqrt(q_tilde * (nu-2)/nu) exactly.
        let nu = 13.5;
        let cov = homogeneous_cov(3, 0.5, 0.25);
        let w = PortfolioWeights::equal(8, 1.0);
        for alpha_tilde in [0.2, 0.5, 0.9, 0.99] {
            let q = crate::numerics::inverse_gamma_quantile(
                prob(alpha_tilde),
                0.5 * nu,
                0.5 * nu,
            )
            .unwrap();
            let joint =
                var_joint_stress(&w, &cov, prob(0.99), nu, prob(alpha_tilde)).unwrap();
            let normal = var_normal(&w, &cov, prob(0.99)).unwrap();
            let identity = joint / normal - (q * (nu - 2.0) / nu).sqrt();
            assert!(identity.abs() < 1e-12, "residual {identity}");
        }
    }

    #[test]
    fn joint_stress_vanishes_with_the_mixing_quantile() {
        // The mixing quantile (hence the VaR) decays to zero as the stress
        // level approaches zero, though only logarithmically fast.
        let nu = 5.0;
        let cov = homogeneous_cov(2, 0.4, 0.25);
        let w = PortfolioWeights::equal(4, 1.0);
        let base = var_normal(&w, &cov, prob(0.99)).unwrap();
        let mut last = base;
        for p in [1e-3, 1e-6, 1e-9, 1e-12] {
            let v = var_joint_stress(&w, &cov, prob(0.99), nu, prob(p)).unwrap();
            assert!(v < last, "joint {v} at level {p} !< {last}");
            last = v;
        }
        assert!(last < 0.3 * base, "joint {last} vs base {base}");
    }

    #[test]
    fn var_is_positively_homogeneous_in_vols() {
        let corr = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.4 });
        let vols = [0.1, 0.2, 0.15];
        let scaled: Vec<f64> = vols.iter().map(|v| v * 3.0).collect();
        let w = PortfolioWeights::new(vec![0.5, 0.3, 0.2], 1.0).unwrap();
        let v1 = var_normal(&w, &covariance(&corr, &vols).unwrap(), prob(0.95)).unwrap();
        let v2 = var_normal(&w, &covariance(&corr, &scaled).unwrap(), prob(0.95)).unwrap();
        assert!((v2 / v1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn var_is_monotone_in_alpha() {
        let cov = homogeneous_cov(2, 0.4, 0.25);
        let w = PortfolioWeights::equal(4, 1.0);
        let mut last = 0.0;
        for a in [0.6, 0.75, 0.9, 0.95, 0.99, 0.999] {
            let v = var_normal(&w, &cov, prob(a)).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn eq12_monte_carlo_consistency() {
        // Fixing the mixing variable at its quantile, the probability that
        // the loss stays below the joint-stress VaR is alpha.
        let nu = 13.5;
        let alpha = 0.99;
        let alpha_tilde = 0.95;
        let cov = homogeneous_cov(3, 0.5, 0.25);
        let w = PortfolioWeights::equal(8, 1.0);
        let var =
            var_joint_stress(&w, &cov, prob(alpha), nu, prob(alpha_tilde)).unwrap();
        let q = crate::numerics::inverse_gamma_quantile(prob(alpha_tilde), 0.5 * nu, 0.5 * nu)
            .unwrap();
        // Conditional on V = q, the portfolio return is normal with standard
        // deviation sqrt(q * (nu-2)/nu) * sigma_p.
        let sigma = (q * (nu - 2.0) / nu * portfolio_variance(&w, &cov).unwrap()).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000usize;
        let mut below = 0usize;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let loss = -w.value() * sigma * z;
            if loss <= var {
                below += 1;
            }
        }
        let frac = below as f64 / n as f64;
        let se = (alpha * (1.0 - alpha) / n as f64).sqrt();
        assert!(
            (frac - alpha).abs() <= 3.0 * se,
            "frac {frac}, alpha {alpha}, 3se {}",
            3.0 * se
        );
    }
}
