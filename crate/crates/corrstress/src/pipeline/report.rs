//! Stress report structures, invariant checks and serialisation.

use serde::Serialize;

use crate::error::{Error, Result};

/// Machine-readable result of a full stress run.
#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    pub seed: u64,
    pub alpha: f64,
    pub nu: f64,
    /// "fitted" or "fixed".
    pub nu_source: String,
    pub calibration: CalibrationSummary,
    pub portfolio: PortfolioSummary,
    pub base: BaseCase,
    pub rows: Vec<StressRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSummary {
    pub factor_names: Vec<String>,
    /// Scenario origin: most recent calibrated coefficients.
    pub beta_bar: Vec<f64>,
    pub sigma_beta: f64,
    pub rho_beta: f64,
    pub covariance: Vec<Vec<f64>>,
    pub first_date: String,
    pub last_date: String,
    pub calibration_count: usize,
    pub window: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PortfolioSummary {
    pub position_count: usize,
    pub instrument_count: usize,
    /// Linearised portfolio value (signed).
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaseCase {
    pub var: f64,
    pub t_var: f64,
}

/// One stressed row: a quantile-constrained (or unconstrained) worst case.
#[derive(Debug, Clone, Serialize)]
pub struct StressRow {
    /// Mahalanobis constraint quantile; None for the unconstrained row.
    pub quantile: Option<f64>,
    /// Squared Mahalanobis radius; None for the unconstrained row.
    pub radius_sq: Option<f64>,
    pub beta_star: Vec<f64>,
    pub mahalanobis: f64,
    pub var: f64,
    pub t_var: f64,
    /// Correlation-stress change vs the base VaR, in percent.
    pub change_pct: f64,
    pub joint_t_var: f64,
    /// Joint-stress change vs the base t-VaR, in percent.
    pub joint_change_pct: f64,
    /// Volatility stress level backing the joint column.
    pub vol_alpha: f64,
    pub on_boundary: bool,
    pub search_converged: bool,
    pub restart_spread: f64,
    /// Largest first-order-condition residual, when the check applies.
    pub stationarity_gradient: Option<f64>,
}

impl StressReport {
    /// Internal consistency: percent columns recompute from the stored
    /// absolutes, and constrained VaR is nondecreasing in the quantile.
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            let change = (row.var / self.base.var - 1.0) * 100.0;
            if (change - row.change_pct).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "stored correlation-stress change {} disagrees with recomputed {} ",
                    row.change_pct, change
                )));
            }
            let joint = (row.joint_t_var / self.base.t_var - 1.0) * 100.0;
            if (joint - row.joint_change_pct).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "stored joint-stress change {} disagrees with recomputed {}",
                    row.joint_change_pct, joint
                )));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for row in self.rows.iter().filter(|r| r.quantile.is_some()) {
            if row.var < last - 1e-9 * last.abs().max(1e-12) {
                return Err(Error::Numerical(format!(
                    "constrained VaR decreased from {last} to {} as the quantile grew",
                    row.var
                )));
            }
            last = row.var;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("report serialisation failed: {e}")))
    }

    /// CSV table with one row per scenario, mirroring the JSON rows.
    pub fn to_csv_table(&self) -> String {
        let mut out = String::from(
            "quantile,var,t_var,change_pct,joint_t_var,joint_change_pct\n",
        );
        out.push_str(&format!(
            "base,{},{},,{},\n",
            self.base.var, self.base.t_var, self.base.t_var
        ));
        for row in &self.rows {
            let label = match row.quantile {
                Some(q) => format!("{q}"),
                None => "unconstrained".to_string(),
            };
            out.push_str(&format!(
                "{label},{},{},{},{},{}\n",
                row.var, row.t_var, row.change_pct, row.joint_t_var, row.joint_change_pct
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> StressReport {
        StressReport {
            seed: 1,
            alpha: 0.99,
            nu: 13.5,
            nu_source: "fixed".into(),
            calibration: CalibrationSummary {
                factor_names: vec!["f".into()],
                beta_bar: vec![0.5],
                sigma_beta: 0.1,
                rho_beta: 0.2,
                covariance: vec![vec![0.01]],
                first_date: "2012-01-01".into(),
                last_date: "2012-12-31".into(),
                calibration_count: 10,
                window: 250,
            },
            portfolio: PortfolioSummary {
                position_count: 2,
                instrument_count: 2,
                value: -1e6,
            },
            base: BaseCase {
                var: 100.0,
                t_var: 104.0,
            },
            rows: vec![
                StressRow {
                    quantile: Some(0.9),
                    radius_sq: Some(2.7),
                    beta_star: vec![0.4],
                    mahalanobis: 1.6,
                    var: 110.0,
                    t_var: 114.4,
                    change_pct: 10.0,
                    joint_t_var: 130.0,
                    joint_change_pct: 25.0,
                    vol_alpha: 0.9,
                    on_boundary: true,
                    search_converged: true,
                    restart_spread: 0.0,
                    stationarity_gradient: None,
                },
                StressRow {
                    quantile: Some(0.95),
                    radius_sq: Some(3.8),
                    beta_star: vec![0.35],
                    mahalanobis: 1.9,
                    var: 115.0,
                    t_var: 119.6,
                    change_pct: 15.0,
                    joint_t_var: 140.0,
                    joint_change_pct: (140.0 / 104.0 - 1.0) * 100.0,
                    vol_alpha: 0.95,
                    on_boundary: true,
                    search_converged: true,
                    restart_spread: 0.0,
                    stationarity_gradient: Some(1e-9),
                },
            ],
            warnings: vec![],
        }
    }

    #[test]
    fn valid_report_passes_and_serialises() {
        let r = report();
        r.validate().unwrap();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"joint_t_var\""));
        let csv = r.to_csv_table();
        assert!(csv.starts_with("quantile,"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn percentage_mismatch_detected() {
        let mut r = report();
        r.rows[0].change_pct = 11.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn monotonicity_violation_detected() {
        let mut r = report();
        r.rows[1].var = 90.0;
        r.rows[1].change_pct = -10.0;
        assert!(r.validate().is_err());
    }
}
