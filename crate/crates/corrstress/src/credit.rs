//! Credit-derivative valuation utilities.
//!
//! Covers what is needed to turn index and tranche market quotes into the
//! spread-return panel and portfolio weights the risk engine consumes:
//! flat-hazard CDS pricing (credit triangle, RPV01, mark-to-market),
//! linearised P&L and weights, and tranche conversions under the
//! large-homogeneous-pool one-factor Gaussian model with base
//! correlations. Premiums are treated as paid continuously throughout.

use crate::error::{Error, Result};
use crate::numerics::{self, Probability};

/// Market quote for a CDS-style instrument under flat hazard and rate.
#[derive(Debug, Clone, Copy)]
pub struct CdsQuote {
    /// Fair spread, decimal per annum (0.01 = 100bp).
    pub spread: f64,
    /// Recovery rate in [0, 1).
    pub recovery: f64,
    /// Maturity in years.
    pub maturity: f64,
    /// Continuously compounded risk-free rate per annum.
    pub rate: f64,
}

impl CdsQuote {
    pub fn new(spread: f64, recovery: f64, maturity: f64, rate: f64) -> Result<Self> {
        if !(spread >= 0.0) {
            return Err(Error::Domain(format!("spread must be >= 0, got {spread}")));
        }
        if !(0.0..1.0).contains(&recovery) {
            return Err(Error::Domain(format!(
                "recovery must lie in [0, 1), got {recovery}"
            )));
        }
        if !(maturity > 0.0) {
            return Err(Error::Domain(format!(
                "maturity must be > 0, got {maturity}"
            )));
        }
        if !rate.is_finite() {
            return Err(Error::Domain(format!("rate must be finite, got {rate}")));
        }
        Ok(CdsQuote {
            spread,
            recovery,
            maturity,
            rate,
        })
    }
}

/// Index tranche quote: attachment/detachment, upfront plus running
/// spread, base correlations at both detachment points, and the flat
/// conventions shared with [`CdsQuote`].
#[derive(Debug, Clone, Copy)]
pub struct TrancheQuote {
    pub attachment: f64,
    pub detachment: f64,
    /// Upfront payment as a decimal of tranche notional.
    pub upfront: f64,
    /// Running spread, decimal per annum.
    pub running_spread: f64,
    pub base_corr_attach: f64,
    pub base_corr_detach: f64,
    /// Index spread, decimal per annum.
    pub index_spread: f64,
    pub recovery: f64,
    pub maturity: f64,
    pub rate: f64,
}

impl TrancheQuote {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        attachment: f64,
        detachment: f64,
        upfront: f64,
        running_spread: f64,
        base_corr_attach: f64,
        base_corr_detach: f64,
        index_spread: f64,
        recovery: f64,
        maturity: f64,
        rate: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&attachment)
            || !(0.0..=1.0).contains(&detachment)
            || attachment >= detachment
        {
            return Err(Error::Domain(format!(
                "need 0 <= attachment < detachment <= 1, got [{attachment}, {detachment}]"
            )));
        }
        for (name, c) in [
            ("base correlation at attachment", base_corr_attach),
            ("base correlation at detachment", base_corr_detach),
        ] {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1), got {c}")));
            }
        }
        if !(index_spread >= 0.0) || !(running_spread >= 0.0) {
            return Err(Error::Domain("spreads must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&recovery) {
            return Err(Error::Domain(format!(
                "recovery must lie in [0, 1), got {recovery}"
            )));
        }
        if !(maturity > 0.0) {
            return Err(Error::Domain(format!(
                "maturity must be > 0, got {maturity}"
            )));
        }
        if !upfront.is_finite() || !rate.is_finite() {
            return Err(Error::Domain("upfront and rate must be finite".into()));
        }
        Ok(TrancheQuote {
            attachment,
            detachment,
            upfront,
            running_spread,
            base_corr_attach,
            base_corr_detach,
            index_spread,
            recovery,
            maturity,
            rate,
        })
    }
}

/// Which side of the protection trade a position is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Seller,
    Buyer,
}

/// A CDS position: signed notional, positive for a protection seller.
#[derive(Debug, Clone)]
pub struct CdsPosition {
    pub id: String,
    pub notional: f64,
}

impl CdsPosition {
    pub fn new(id: impl Into<String>, notional: f64) -> Result<Self> {
        if notional == 0.0 || !notional.is_finite() {
            return Err(Error::Invalid("position notional must be nonzero".into()));
        }
        Ok(CdsPosition {
            id: id.into(),
            notional,
        })
    }

    pub fn from_side(id: impl Into<String>, size: f64, side: Side) -> Result<Self> {
        let signed = match side {
            Side::Seller => size.abs(),
            Side::Buyer => -size.abs(),
        };
        CdsPosition::new(id, signed)
    }
}

/// Credit triangle: flat hazard rate `lambda = spread / (1 - recovery)`.
pub fn credit_triangle(spread: f64, recovery: f64) -> Result<f64> {
    if !(recovery < 1.0) {
        return Err(Error::Domain(format!(
            "recovery must be below 1, got {recovery}"
        )));
    }
    Ok(spread / (1.0 - recovery))
}

/// Risky duration `(1 - e^{-(r + lambda) T}) / (r + lambda)`, with a series
/// expansion once the exponent rate drops below 1e-8.
pub fn rpv01(quote: &CdsQuote) -> Result<f64> {
    let lambda = credit_triangle(quote.spread, quote.recovery)?;
    let a = quote.rate + lambda;
    let t = quote.maturity;
    if a.abs() < 1e-8 {
        let x = a * t;
        return Ok(t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0));
    }
    // exp_m1 keeps the numerator exact as a*t approaches zero.
    Ok(-(-a * t).exp_m1() / a)
}

/// Mark-to-market of an existing CDS from the requested side:
/// `(contract spread - current spread) * RPV01 * |notional|` for the
/// seller, negated for the buyer.
pub fn cds_mtm(contract_spread: f64, quote: &CdsQuote, notional: f64, side: Side) -> Result<f64> {
    let seller = (contract_spread - quote.spread) * rpv01(quote)? * notional.abs();
    Ok(match side {
        Side::Seller => seller,
        Side::Buyer => -seller,
    })
}

/// Linearised portfolio value and percentage weights.
#[derive(Debug, Clone)]
pub struct PnlWeights {
    /// Linear approximation of the portfolio value,
    /// `-sum_j A_j RPV01_j s_j`.
    pub value: f64,
    /// Signed percentage weights, summing to one.
    pub weights: Vec<f64>,
}

impl PnlWeights {
    /// Linear P&L for the given spread returns: `value * sum_i w_i r_i`.
    pub fn pnl(&self, spread_returns: &[f64]) -> Result<f64> {
        if spread_returns.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "{} returns for {} weights",
                spread_returns.len(),
                self.weights.len()
            )));
        }
        let weighted: f64 = self
            .weights
            .iter()
            .zip(spread_returns)
            .map(|(w, r)| w * r)
            .sum();
        Ok(self.value * weighted)
    }
}

/// Computes the linearised portfolio value `V = -sum_j A_j RPV01_j s_j`
/// and the weights `w_i = A_i RPV01_i s_i / sum_j A_j RPV01_j s_j`.
///
/// Fails when the denominator nets below `netting_floor` in absolute
/// terms, since the weights blow up for a nearly self-financing book.
pub fn pnl_weights(
    positions: &[CdsPosition],
    quotes: &[CdsQuote],
    netting_floor: f64,
) -> Result<PnlWeights> {
    if positions.is_empty() {
        return Err(Error::Invalid("no positions supplied".into()));
    }
    if positions.len() != quotes.len() {
        return Err(Error::Dimension(format!(
            "{} positions vs {} quotes",
            positions.len(),
            quotes.len()
        )));
    }
    let mut exposure = Vec::with_capacity(positions.len());
    let mut denominator = 0.0;
    for (p, q) in positions.iter().zip(quotes) {
        let e = p.notional * rpv01(q)? * q.spread;
        exposure.push(e);
        denominator += e;
    }
    if denominator.abs() < netting_floor {
        return Err(Error::Degenerate(format!(
            "portfolio nets to {denominator:.3e}, below the {netting_floor:.3e} floor; weights are unbounded"
        )));
    }
    Ok(PnlWeights {
        value: -denominator,
        weights: exposure.iter().map(|e| e / denominator).collect(),
    })
}

/// First-order P&L for given spread returns:
/// `-sum_i A_i RPV01_i s_i r_i`.
pub fn linear_pnl(
    positions: &[CdsPosition],
    quotes: &[CdsQuote],
    spread_returns: &[f64],
) -> Result<f64> {
    if positions.len() != quotes.len() || positions.len() != spread_returns.len() {
        return Err(Error::Dimension(format!(
            "{} positions, {} quotes, {} returns",
            positions.len(),
            quotes.len(),
            spread_returns.len()
        )));
    }
    let mut pnl = 0.0;
    for ((p, q), r) in positions.iter().zip(quotes).zip(spread_returns) {
        pnl -= p.notional * rpv01(q)? * q.spread * r;
    }
    Ok(pnl)
}

// Expected loss E[min(L, K)] of the base tranche (0, K) in pool-notional
// units under the large-homogeneous-pool one-factor Gaussian model, where
// L = (1-R) * Phi((C - sqrt(rho) M) / sqrt(1-rho)) and C = Phi^{-1}(p).
fn base_tranche_expected_loss(default_prob: f64, recovery: f64, k: f64, rho: f64) -> Result<f64> {
    let lgd = 1.0 - recovery;
    if k <= 0.0 || default_prob <= 0.0 {
        return Ok(0.0);
    }
    let expected_pool_loss = lgd * default_prob;
    if k >= lgd || default_prob >= 1.0 {
        // The tranche can never be exhausted (or everything defaults):
        // its loss is the whole pool loss.
        return Ok(expected_pool_loss.min(k));
    }
    if rho == 0.0 {
        // No systematic factor: the pool loss is deterministic.
        return Ok(expected_pool_loss.min(k));
    }
    let c = numerics::normal_quantile(Probability::new(default_prob)?);
    let a = numerics::normal_quantile(Probability::new(k / lgd)?);
    // Conditional pool loss hits K exactly at the factor value m_star;
    // below it the tranche is wiped out.
    let m_star = (c - (1.0 - rho).sqrt() * a) / rho.sqrt();
    let wiped = k * numerics::normal_cdf(m_star);

    let lo = m_star.max(-8.5);
    let hi = 8.5_f64;
    if lo >= hi {
        return Ok(k.min(expected_pool_loss));
    }
    // The integrand is smooth on [m_star, inf); composite Simpson on the
    // truncated range keeps the quadrature error far below 1e-10.
    let steps = 4_000usize;
    let h = (hi - lo) / steps as f64;
    let f = |m: f64| {
        numerics::normal_cdf((c - rho.sqrt() * m) / (1.0 - rho).sqrt())
            * numerics::normal_density(m)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    let survived_part = lgd * acc * h / 3.0;
    Ok((wiped + survived_part).clamp(0.0, k))
}

/// Tranche survival probability `Q(T, K1, K2) = 1 - ETL / (K2 - K1)` at
/// maturity, with the expected tranche loss built from base tranches at
/// their own base correlations and the index survival from the credit
/// triangle. `pool_size` is reserved for a finite-pool loss recursion; the
/// large-pool limit used here does not depend on it.
pub fn tranche_survival_at_maturity(quote: &TrancheQuote, _pool_size: usize) -> Result<f64> {
    let lambda = credit_triangle(quote.index_spread, quote.recovery)?;
    let default_prob = 1.0 - (-lambda * quote.maturity).exp();
    let el_detach = base_tranche_expected_loss(
        default_prob,
        quote.recovery,
        quote.detachment,
        quote.base_corr_detach,
    )?;
    let el_attach = base_tranche_expected_loss(
        default_prob,
        quote.recovery,
        quote.attachment,
        quote.base_corr_attach,
    )?;
    let etl = (el_detach - el_attach) / (quote.detachment - quote.attachment);
    Ok((1.0 - etl).clamp(0.0, 1.0))
}

/// Result of the equivalent-spread fixed point.
#[derive(Debug, Clone, Copy)]
pub struct EquivalentSpread {
    /// Running spread without upfront that matches the quoted pair.
    pub spread: f64,
    pub iterations: usize,
    /// Residual of the defining equation at the solution.
    pub residual: f64,
}

/// Converts an (upfront, running) tranche quote into the financially
/// equivalent running spread without upfront, solving
/// `s = upfront / RPV01(s/(1-R)) + running` by damped fixed-point
/// iteration from `s0 = running + upfront / maturity`.
pub fn tranche_equivalent_spread(quote: &TrancheQuote) -> Result<EquivalentSpread> {
    let recovery = quote.recovery;
    let t = quote.maturity;
    let rpv01_at = |s: f64| -> Result<f64> {
        rpv01(&CdsQuote::new(s.max(0.0), recovery, t, quote.rate)?)
    };
    let iterate = |s: f64| -> Result<f64> { Ok(quote.upfront / rpv01_at(s)? + quote.running_spread) };

    let mut s = (quote.running_spread + quote.upfront / t).max(1e-12);
    let mut trace = Vec::new();
    let mut last_step = 0.0_f64;
    let mut damping = 1.0;
    for iteration in 0..200 {
        let target = iterate(s)?;
        if target < 0.0 {
            return Err(Error::Domain(format!(
                "upfront {} is below -running * RPV01; no nonnegative equivalent spread",
                quote.upfront
            )));
        }
        let step = target - s;
        // Halve the update when consecutive steps flip sign (oscillation).
        if step * last_step < 0.0 {
            damping = 0.5;
        }
        s += damping * step;
        if s < 0.0 {
            s = 0.0;
        }
        trace.push(s);
        last_step = step;
        if step.abs() <= 1e-10 * s.max(1.0) {
            let residual = s - iterate(s)?;
            if residual.abs() <= 1e-10 {
                return Ok(EquivalentSpread {
                    spread: s,
                    iterations: iteration + 1,
                    residual,
                });
            }
        }
    }
    let tail: Vec<String> = trace.iter().rev().take(5).map(|v| format!("{v:.12}")).collect();
    Err(Error::NoConvergence(format!(
        "equivalent spread fixed point failed after 200 iterations; last iterates [{}]",
        tail.join(", ")
    )))
}
