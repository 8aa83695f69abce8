//! End-to-end batch pipeline: ingestion, rolling calibration, scenario
//! search, stress reporting and figure-grid emission.
//!
//! Every stage failure carries the stage name; output files are written
//! atomically and only after the assembled report passes its own
//! consistency checks, so partial reports never land on disk.

pub mod config;
pub mod figures;
pub mod io;
pub mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::credit::{self, CdsQuote};
use crate::error::{Error, Result};
use crate::factor_model::{
    self, build_distances_with_flags, BetaVector, Dated, DistanceMatrixSet, ReturnPanel,
    RollingOptions,
};
use crate::numerics::{self, Probability};
use crate::portfolio_risk::{self, PortfolioWeights};
use crate::scenario::{self, BetaDistribution, RiskMeasure, StressScenario};

pub use config::{FactorSpec, NuChoice, RunConfig};
pub use report::StressReport;

fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| e.in_stage(name))
}

/// Output of a calibration-only run.
#[derive(Debug)]
pub struct CalibrationArtifacts {
    pub dates: Vec<chrono::NaiveDate>,
    pub factor_names: Vec<String>,
    pub beta_series: Vec<Dated<BetaVector>>,
    pub estimate: factor_model::BetaDistributionEstimate,
    pub warnings: Vec<String>,
}

/// Loads instruments and spreads, then runs the rolling calibration and
/// the coefficient-change estimation.
pub fn run_calibration(config: &RunConfig) -> Result<CalibrationArtifacts> {
    let loaded = load_market_data(config)?;
    Ok(CalibrationArtifacts {
        dates: loaded.beta_series.iter().map(|d| d.date).collect(),
        factor_names: config.factors.iter().map(|f| f.name.clone()).collect(),
        beta_series: loaded.beta_series.clone(),
        estimate: loaded.estimate,
        warnings: loaded.warnings,
    })
}

struct MarketData {
    ids: Vec<String>,
    distances: DistanceMatrixSet,
    panel: ReturnPanel,
    spread_panel: io::SpreadPanel,
    maturities: BTreeMap<String, f64>,
    beta_series: Vec<Dated<BetaVector>>,
    estimate: factor_model::BetaDistributionEstimate,
    warnings: Vec<String>,
}

fn load_market_data(config: &RunConfig) -> Result<MarketData> {
    let instruments = stage(
        "load-instruments",
        io::load_instruments(&config.instruments, &config.factors),
    )?;
    let by_id: BTreeMap<String, &io::Instrument> = instruments
        .iter()
        .map(|inst| (inst.id.clone(), inst))
        .collect();
    let maturities: BTreeMap<String, f64> = instruments
        .iter()
        .filter_map(|inst| inst.field("maturity_years").map(|m| (inst.id.clone(), m)))
        .collect();

    let ctx = io::SpreadContext {
        maturities: maturities.clone(),
        recovery: config.recovery,
        rate: config.rate,
        spreads_in_bps: config.spreads_in_bps,
    };
    let spread_panel = stage("load-spreads", io::load_spread_panel(&config.spreads, &ctx))?;
    let mut warnings = spread_panel.warnings.clone();

    // Restrict the panel to instruments we have attributes for.
    let keep: Vec<usize> = spread_panel
        .ids
        .iter()
        .enumerate()
        .filter(|(_, id)| by_id.contains_key(*id))
        .map(|(i, _)| i)
        .collect();
    let dropped: Vec<&String> = spread_panel
        .ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .collect();
    for id in dropped {
        warnings.push(format!("spread series '{id}' has no instrument row; dropped"));
    }
    if keep.len() < 2 {
        return Err(Error::Invalid(format!(
            "only {} spread series match the instruments table",
            keep.len()
        ))
        .in_stage("load-spreads"));
    }
    let spread_panel = io::SpreadPanel {
        dates: spread_panel.dates.clone(),
        ids: keep.iter().map(|&i| spread_panel.ids[i].clone()).collect(),
        levels: DMatrix::from_fn(spread_panel.dates.len(), keep.len(), |r, c| {
            spread_panel.levels[(r, keep[c])]
        }),
        warnings: Vec::new(),
    };

    let exposures = stage(
        "distances",
        spread_panel
            .ids
            .iter()
            .map(|id| by_id[id].exposure(&config.factors))
            .collect::<Result<Vec<_>>>(),
    )?;
    let flags: Vec<bool> = config.factors.iter().map(|f| f.normalise).collect();
    let distances = stage("distances", build_distances_with_flags(&exposures, &flags))?;

    let (panel, gap_warnings) = stage("load-spreads", spread_panel.returns(config.log_returns))?;
    warnings.extend(gap_warnings);

    let rolling = RollingOptions {
        window: config.window,
        min_obs_fraction: config.min_obs_frac,
        clip_eps: config.clip_eps,
    };
    let beta_series = stage(
        "calibrate",
        factor_model::rolling_calibration(&panel, &distances, &rolling),
    )?;
    let estimate = stage(
        "estimate-distribution",
        factor_model::estimate_beta_distribution(&beta_series),
    )?;

    Ok(MarketData {
        ids: spread_panel.ids.clone(),
        distances,
        panel,
        spread_panel,
        maturities,
        beta_series,
        estimate,
        warnings,
    })
}

/// Fits the Student-t degrees of freedom on complete return rows:
/// moment-matched start from the average excess kurtosis, then
/// one-dimensional likelihood maximisation with the sample covariance
/// held fixed as the second-moment target.
pub fn fit_nu(returns: &DMatrix<f64>) -> Result<f64> {
    let complete: Vec<usize> = (0..returns.nrows())
        .filter(|&t| (0..returns.ncols()).all(|j| returns[(t, j)].is_finite()))
        .collect();
    let t_count = complete.len();
    let n = returns.ncols();
    if t_count < n + 2 || t_count < 30 {
        return Err(Error::InsufficientHistory {
            required: (n + 2).max(30),
            available: t_count,
        });
    }
    let rows: Vec<DVector<f64>> = complete
        .iter()
        .map(|&t| DVector::from_fn(n, |j, _| returns[(t, j)]))
        .collect();

    // Zero-mean sample covariance, matching the risk model's convention.
    let mut cov = DMatrix::zeros(n, n);
    for r in &rows {
        cov += r * r.transpose();
    }
    cov /= t_count as f64;
    let chol = nalgebra::Cholesky::new(cov.clone()).ok_or_else(|| {
        Error::Singular("return covariance is singular; fix nu explicitly".into())
    })?;
    let ln_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let d2: Vec<f64> = rows.iter().map(|r| r.dot(&chol.solve(r))).collect();

    // Moment start: excess kurtosis of a t-distribution is 6/(nu - 4).
    let mut kurt_acc = 0.0;
    for j in 0..n {
        let m2: f64 = rows.iter().map(|r| r[j] * r[j]).sum::<f64>() / t_count as f64;
        let m4: f64 = rows.iter().map(|r| r[j].powi(4)).sum::<f64>() / t_count as f64;
        if m2 > 0.0 {
            kurt_acc += m4 / (m2 * m2) - 3.0;
        }
    }
    let kurt = kurt_acc / n as f64;
    let nu_start = if kurt > 0.05 {
        (4.0 + 6.0 / kurt).clamp(4.2, 150.0)
    } else {
        50.0
    };

    let tf = t_count as f64;
    let nf = n as f64;
    let log_likelihood = |nu: f64| -> f64 {
        let mut ll = tf
            * (numerics::ln_gamma(0.5 * (nu + nf))
                - numerics::ln_gamma(0.5 * nu)
                - 0.5 * nf * ((nu - 2.0) * std::f64::consts::PI).ln())
            - 0.5 * tf * ln_det;
        for &d in &d2 {
            ll -= 0.5 * (nu + nf) * (1.0 + d / (nu - 2.0)).ln();
        }
        ll
    };

    // Coarse bracket around the moment start, then golden-section refine.
    let lo_bound = (nu_start / 8.0).max(2.05);
    let hi_bound = (nu_start * 8.0).min(400.0);
    let coarse = 48;
    let mut best_i = 0;
    let mut best_ll = f64::NEG_INFINITY;
    let grid: Vec<f64> = (0..=coarse)
        .map(|i| {
            lo_bound * (hi_bound / lo_bound).powf(i as f64 / coarse as f64)
        })
        .collect();
    for (i, &nu) in grid.iter().enumerate() {
        let ll = log_likelihood(nu);
        if ll > best_ll {
            best_ll = ll;
            best_i = i;
        }
    }
    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(coarse)];
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = log_likelihood(x1);
    let mut f2 = log_likelihood(x2);
    for _ in 0..80 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = log_likelihood(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = log_likelihood(x1);
        }
        if (b - a).abs() < 1e-8 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Artifact paths written by [`run_stress`].
#[derive(Debug)]
pub struct StressArtifacts {
    pub report: StressReport,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
}

/// Runs the full stress pipeline and writes `report.json` plus
/// `report_table.csv` into the configured output directory.
pub fn run_stress(config: &RunConfig) -> Result<StressArtifacts> {
    let positions_path = config.positions.clone().ok_or_else(|| {
        Error::Invalid("a positions file is required for a stress run".into()).in_stage("load-positions")
    })?;
    let data = load_market_data(config)?;
    let mut warnings = data.warnings.clone();

    let positions = stage("load-positions", io::load_positions(&positions_path))?;
    let id_index: BTreeMap<&String, usize> = data
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    for p in &positions {
        if !id_index.contains_key(&p.id) {
            return Err(Error::Invalid(format!(
                "position '{}' has no spread history",
                p.id
            ))
            .in_stage("load-positions"));
        }
    }
    let position_cols: Vec<usize> = positions.iter().map(|p| id_index[&p.id]).collect();

    // Quotes as of the last panel date, for weights and vols.
    let last_levels = data.spread_panel.last_levels();
    let last_date = *data.spread_panel.dates.last().expect("nonempty panel");
    let quotes: Vec<CdsQuote> = stage(
        "weights",
        positions
            .iter()
            .zip(&position_cols)
            .map(|(p, &col)| {
                let (date, level) = last_levels[col].ok_or_else(|| {
                    Error::Invalid(format!("no spread level available for '{}'", p.id))
                })?;
                if date != last_date {
                    warnings.push(format!(
                        "{}: using spread from {date}, portfolio date is {last_date}",
                        p.id
                    ));
                }
                let maturity = *data.maturities.get(&p.id).ok_or_else(|| {
                    Error::Invalid(format!("no maturity for position '{}'", p.id))
                })?;
                CdsQuote::new(level, config.recovery, maturity, config.rate)
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    let pnl = stage(
        "weights",
        credit::pnl_weights(&positions, &quotes, config.netting_floor),
    )?;
    let weights = stage(
        "weights",
        PortfolioWeights::new(pnl.weights.clone(), pnl.value),
    )?;

    // Daily vols from the trailing calibration window of returns.
    let window_rows = data.panel.len() - config.window..data.panel.len();
    let vols = stage(
        "volatility",
        position_cols
            .iter()
            .map(|&col| {
                let values: Vec<f64> = window_rows
                    .clone()
                    .map(|t| data.panel.returns()[(t, col)])
                    .filter(|v| v.is_finite())
                    .collect();
                if values.len() < 3 {
                    return Err(Error::Degenerate(format!(
                        "instrument '{}' has {} usable returns in the window",
                        data.ids[col],
                        values.len()
                    )));
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (values.len() - 1) as f64;
                Ok(var.sqrt())
            })
            .collect::<Result<Vec<f64>>>(),
    )?;

    // Distances restricted to the position instruments.
    let distances = stage("distances", data.distances.select(&position_cols))?;

    let (nu, nu_source) = match config.nu {
        NuChoice::Fixed(nu) => (nu, "fixed"),
        NuChoice::Fit => {
            let sub = DMatrix::from_fn(config.window, position_cols.len(), |r, c| {
                data.panel.returns()[(data.panel.len() - config.window + r, position_cols[c])]
            });
            (stage("fit-nu", fit_nu(&sub))?, "fitted")
        }
    };

    let alpha = Probability::new(config.alpha).map_err(|e| e.in_stage("base"))?;
    let dist = stage("estimate-distribution", data.estimate.distribution())?;
    let beta_bar = data.estimate.mean.clone();

    let base_cov = stage(
        "base",
        scenario::scenario_covariance(&vols, &distances, &beta_bar),
    )?;
    let base_var = stage("base", portfolio_risk::var_normal(&weights, &base_cov, alpha))?;
    let base_t_var = stage(
        "base",
        portfolio_risk::var_t(&weights, &base_cov, alpha, nu),
    )?;

    let search_config = config.search_config();
    let m = config.factors.len() as u32;
    let mut rows = Vec::new();
    let mut quantiles = config.quantiles.clone();
    quantiles.sort_by(f64::total_cmp);
    for &quantile in &quantiles {
        let q = Probability::new(quantile).map_err(|e| e.in_stage("stress"))?;
        let radius_sq = stage("stress", scenario::quantile_to_radius(q, m))?;
        let row = stress_row(
            StressRowInputs {
                quantile: Some(quantile),
                radius_sq: Some(radius_sq),
                vol_alpha: quantile,
            },
            &weights,
            &vols,
            &distances,
            &dist,
            alpha,
            nu,
            base_var,
            base_t_var,
            &search_config,
        )?;
        rows.push(row);
    }
    if config.include_unconstrained {
        // Unconstrained in the correlation coefficients; the volatility
        // stress stays at the largest configured quantile.
        let vol_alpha = quantiles.last().copied().unwrap_or(config.alpha);
        let row = stress_row(
            StressRowInputs {
                quantile: None,
                radius_sq: None,
                vol_alpha,
            },
            &weights,
            &vols,
            &distances,
            &dist,
            alpha,
            nu,
            base_var,
            base_t_var,
            &search_config,
        )?;
        rows.push(row);
    }

    let report = StressReport {
        seed: config.seed,
        alpha: config.alpha,
        nu,
        nu_source: nu_source.to_string(),
        calibration: report::CalibrationSummary {
            factor_names: config.factors.iter().map(|f| f.name.clone()).collect(),
            beta_bar: beta_bar.as_slice().to_vec(),
            sigma_beta: data.estimate.sigma_beta,
            rho_beta: data.estimate.rho_beta,
            covariance: (0..data.estimate.cov.nrows())
                .map(|i| data.estimate.cov.row(i).iter().cloned().collect())
                .collect(),
            first_date: data.beta_series.first().expect("nonempty").date.to_string(),
            last_date: data.beta_series.last().expect("nonempty").date.to_string(),
            calibration_count: data.beta_series.len(),
            window: config.window,
        },
        portfolio: report::PortfolioSummary {
            position_count: positions.len(),
            instrument_count: data.ids.len(),
            value: pnl.value,
        },
        base: report::BaseCase {
            var: base_var,
            t_var: base_t_var,
        },
        rows,
        warnings,
    };
    stage("report", report.validate())?;

    let report_json = config.out_dir.join("report.json");
    let report_csv = config.out_dir.join("report_table.csv");
    stage(
        "report",
        io::write_atomic(&report_json, report.to_json()?.as_bytes()),
    )?;
    stage(
        "report",
        io::write_atomic(&report_csv, report.to_csv_table().as_bytes()),
    )?;
    Ok(StressArtifacts {
        report,
        report_json,
        report_csv,
    })
}

struct StressRowInputs {
    quantile: Option<f64>,
    radius_sq: Option<f64>,
    vol_alpha: f64,
}

#[allow(clippy::too_many_arguments)]
fn stress_row(
    inputs: StressRowInputs,
    weights: &PortfolioWeights,
    vols: &[f64],
    distances: &DistanceMatrixSet,
    dist: &BetaDistribution,
    alpha: Probability,
    nu: f64,
    base_var: f64,
    base_t_var: f64,
    search_config: &scenario::SearchConfig,
) -> Result<report::StressRow> {
    let radius = inputs.radius_sq.unwrap_or(f64::INFINITY);
    let outcome = stage(
        "stress",
        scenario::worst_case_search(weights, vols, distances, dist, radius, search_config),
    )?;
    let beta_star = outcome.scenario.beta.clone();
    let var = stage(
        "stress",
        scenario::scenario_var(
            weights,
            vols,
            distances,
            &beta_star,
            RiskMeasure::Normal { alpha },
        ),
    )?;
    let t_var = stage(
        "stress",
        scenario::scenario_var(
            weights,
            vols,
            distances,
            &beta_star,
            RiskMeasure::StudentT { alpha, nu },
        ),
    )?;
    let vol_alpha_p = Probability::new(inputs.vol_alpha).map_err(|e| e.in_stage("stress"))?;
    let joint_t_var = stage(
        "stress",
        scenario::scenario_var(
            weights,
            vols,
            distances,
            &beta_star,
            RiskMeasure::JointStress {
                alpha,
                nu,
                vol_alpha: vol_alpha_p,
            },
        ),
    )?;
    let stationarity = stage(
        "stress",
        scenario::stationarity_check(
            &StressScenario {
                beta: beta_star.clone(),
                mahalanobis: outcome.scenario.mahalanobis,
                constraint_quantile: inputs.quantile,
                label: outcome.scenario.label.clone(),
            },
            weights,
            vols,
            distances,
            dist,
            radius,
        ),
    )?;
    Ok(report::StressRow {
        quantile: inputs.quantile,
        radius_sq: inputs.radius_sq,
        beta_star: beta_star.as_slice().to_vec(),
        mahalanobis: outcome.scenario.mahalanobis,
        var,
        t_var,
        change_pct: (var / base_var - 1.0) * 100.0,
        joint_t_var,
        joint_change_pct: (joint_t_var / base_t_var - 1.0) * 100.0,
        vol_alpha: inputs.vol_alpha,
        on_boundary: outcome.on_boundary,
        search_converged: outcome.converged,
        restart_spread: outcome.restart_spread,
        stationarity_gradient: stationarity.applicable.then_some(stationarity.max_gradient),
    })
}
