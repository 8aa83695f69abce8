//! Figure-data emission: CSV grids of the homogeneous closed forms
//! (portfolio VaR against factor count, coefficient shifts, partial
//! stresses, worst cases, joint stresses and constraint quantiles).
//!
//! Each grid is a long-format CSV with columns `x,series,y`.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::homogeneous;
use crate::numerics::{self, Probability};
use crate::pipeline::config::RunConfig;
use crate::pipeline::io::write_atomic;

struct Grid {
    name: &'static str,
    rows: Vec<(f64, String, f64)>,
}

impl Grid {
    fn to_csv(&self) -> String {
        let mut out = String::from("x,series,y\n");
        for (x, series, y) in &self.rows {
            out.push_str(&format!("{x},{series},{y}\n"));
        }
        out
    }
}

/// Emits all figure grids into the output directory and returns the
/// written paths.
pub fn emit_figure_data(config: &RunConfig) -> Result<Vec<PathBuf>> {
    if config.fig_m_max < 1 {
        return Err(Error::Invalid("fig_m_max must be >= 1".into()));
    }
    if config.fig_delta_steps < 2 || config.fig_nu_steps < 2 {
        return Err(Error::Invalid("figure grids need at least two steps".into()));
    }
    if !(config.fig_nu_min > 2.0 && config.fig_nu_max > config.fig_nu_min) {
        return Err(Error::Invalid(format!(
            "need 2 < fig_nu_min < fig_nu_max, got [{}, {}]",
            config.fig_nu_min, config.fig_nu_max
        )));
    }
    let alpha = Probability::new(config.alpha)?;
    let z = numerics::normal_quantile(alpha);
    let sigma_daily = config.fig_sigma / config.day_count.sqrt();
    let m_fixed = 5.min(config.fig_m_max);
    let var_at = |m: usize, beta: f64| -> Result<f64> {
        let spec = homogeneous::HomogeneousSpec::uniform(
            m,
            sigma_daily,
            beta,
            config.fig_sigma_beta.max(1e-12),
            config.fig_rho_beta,
        )?;
        Ok(z * homogeneous::portfolio_variance(&spec).sqrt())
    };

    let mut grids = Vec::new();

    // VaR as a function of the factor count, coefficient recalibrated to
    // the target average correlation for every m.
    let mut rows = Vec::new();
    for m in 1..=config.fig_m_max {
        let beta = homogeneous::calibrate_beta(m, config.fig_target_rho)?;
        rows.push((m as f64, "var".to_string(), var_at(m, beta)?));
    }
    grids.push(Grid {
        name: "fig1_var_vs_m.csv",
        rows,
    });

    // VaR change against a relative coefficient shift for several initial
    // average correlations.
    let mut rows = Vec::new();
    for target in [0.1, 0.3, 0.5] {
        let beta_bar = homogeneous::calibrate_beta(m_fixed, target)?;
        let base = var_at(m_fixed, beta_bar)?;
        for step in 0..config.fig_delta_steps {
            let rel = -1.0 + 2.0 * step as f64 / (config.fig_delta_steps - 1) as f64;
            let var = var_at(m_fixed, beta_bar * (1.0 + rel))?;
            rows.push((rel, format!("rho={target}"), (var / base - 1.0) * 100.0));
        }
    }
    grids.push(Grid {
        name: "fig1_var_vs_delta_beta.csv",
        rows,
    });

    // Partial stress: j core factors move, peripherals follow their
    // conditional expectation at rho_beta = 0.5.
    let beta_bar = homogeneous::calibrate_beta(m_fixed, config.fig_target_rho)?;
    let mut rows = Vec::new();
    for j in 1..=m_fixed {
        let spec = homogeneous::HomogeneousSpec::uniform(
            m_fixed,
            sigma_daily,
            beta_bar,
            config.fig_sigma_beta.max(1e-12),
            0.5,
        )?;
        let base = z * homogeneous::portfolio_variance(&spec).sqrt();
        for step in 0..config.fig_delta_steps {
            let rel = -1.0 + 2.0 * step as f64 / (config.fig_delta_steps - 1) as f64;
            let variance = homogeneous::stressed_variance(&spec, j, rel * beta_bar)?;
            let var = z * variance.sqrt();
            rows.push((rel, format!("j={j}"), (var / base - 1.0) * 100.0));
        }
    }
    grids.push(Grid {
        name: "fig1_partial_stress_core_count.csv",
        rows,
    });

    // Partial stress with two core factors for a range of coefficient
    // correlations.
    let mut rows = Vec::new();
    for rho_beta in [0.0, 0.25, 0.5, 0.75] {
        let spec = homogeneous::HomogeneousSpec::uniform(
            m_fixed,
            sigma_daily,
            beta_bar,
            config.fig_sigma_beta.max(1e-12),
            rho_beta,
        )?;
        let base = z * homogeneous::portfolio_variance(&spec).sqrt();
        let j = 2.min(m_fixed);
        for step in 0..config.fig_delta_steps {
            let rel = -1.0 + 2.0 * step as f64 / (config.fig_delta_steps - 1) as f64;
            let variance = homogeneous::stressed_variance(&spec, j, rel * beta_bar)?;
            let var = z * variance.sqrt();
            rows.push((rel, format!("rho_beta={rho_beta}"), (var / base - 1.0) * 100.0));
        }
    }
    grids.push(Grid {
        name: "fig1_partial_stress_rho_beta.csv",
        rows,
    });

    // Initial and worst-case VaR against the factor count.
    let quantile = Probability::new(config.fig_quantile)?;
    let mut rows = Vec::new();
    for m in 1..=config.fig_m_max {
        let beta = homogeneous::calibrate_beta(m, config.fig_target_rho)?;
        let h = numerics::chi_square_quantile(quantile, m as u32)?;
        let worst = homogeneous::worst_case_beta(
            beta,
            m,
            config.fig_sigma_beta,
            config.fig_rho_beta,
            h,
        )?;
        rows.push((m as f64, "base".to_string(), var_at(m, beta)?));
        rows.push((m as f64, "worst".to_string(), var_at(m, worst.beta)?));
    }
    grids.push(Grid {
        name: "fig2_worst_case_vs_m.csv",
        rows,
    });

    // Percentage worst-case increase against m for several coefficient
    // distributions.
    let mut rows = Vec::new();
    for (sb, rb) in [
        (config.fig_sigma_beta, config.fig_rho_beta),
        (1.5 * config.fig_sigma_beta, config.fig_rho_beta),
        (config.fig_sigma_beta, 0.5),
        (1.5 * config.fig_sigma_beta, 0.5),
    ] {
        for m in 1..=config.fig_m_max {
            let beta = homogeneous::calibrate_beta(m, config.fig_target_rho)?;
            let h = numerics::chi_square_quantile(quantile, m as u32)?;
            let worst = homogeneous::worst_case_beta(beta, m, sb, rb, h)?;
            let increase = (var_at(m, worst.beta)? / var_at(m, beta)? - 1.0) * 100.0;
            rows.push((m as f64, format!("sigma_beta={sb},rho_beta={rb}"), increase));
        }
    }
    grids.push(Grid {
        name: "fig2_increase_vs_m.csv",
        rows,
    });

    // Joint correlation/volatility stress against the tail parameter.
    let beta_bar = homogeneous::calibrate_beta(m_fixed, config.fig_target_rho)?;
    let h = numerics::chi_square_quantile(quantile, m_fixed as u32)?;
    let worst = homogeneous::worst_case_beta(
        beta_bar,
        m_fixed,
        config.fig_sigma_beta,
        config.fig_rho_beta,
        h,
    )?;
    let base_spec = homogeneous::HomogeneousSpec::uniform(
        m_fixed,
        sigma_daily,
        beta_bar,
        config.fig_sigma_beta.max(1e-12),
        config.fig_rho_beta,
    )?;
    let worst_spec = homogeneous::HomogeneousSpec::uniform(
        m_fixed,
        sigma_daily,
        worst.beta,
        config.fig_sigma_beta.max(1e-12),
        config.fig_rho_beta,
    )?;
    let base_sd = homogeneous::portfolio_variance(&base_spec).sqrt();
    let worst_sd = homogeneous::portfolio_variance(&worst_spec).sqrt();
    let mut rows = Vec::new();
    for step in 0..config.fig_nu_steps {
        let nu = config.fig_nu_min
            + (config.fig_nu_max - config.fig_nu_min) * step as f64
                / (config.fig_nu_steps - 1) as f64;
        let t_quantile = numerics::student_t_quantile(alpha, nu)?;
        let t_var = t_quantile * ((nu - 2.0) / nu).sqrt() * base_sd;
        let q = numerics::inverse_gamma_quantile(alpha, 0.5 * nu, 0.5 * nu)?;
        let scale = (q * (nu - 2.0) / nu).sqrt();
        let vol_only = z * scale * base_sd;
        let joint = z * scale * worst_sd;
        rows.push((nu, "vol_only".to_string(), (vol_only / t_var - 1.0) * 100.0));
        rows.push((nu, "joint".to_string(), (joint / t_var - 1.0) * 100.0));
    }
    grids.push(Grid {
        name: "fig2_joint_vs_nu.csv",
        rows,
    });

    // Worst-case VaR against the Mahalanobis constraint quantile.
    let mut rows = Vec::new();
    for q in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999] {
        let h = numerics::chi_square_quantile(Probability::new(q)?, m_fixed as u32)?;
        let worst = homogeneous::worst_case_beta(
            beta_bar,
            m_fixed,
            config.fig_sigma_beta,
            config.fig_rho_beta,
            h,
        )?;
        rows.push((q, "worst".to_string(), var_at(m_fixed, worst.beta)?));
    }
    grids.push(Grid {
        name: "fig2_var_vs_quantile.csv",
        rows,
    });

    let mut paths = Vec::new();
    for grid in &grids {
        let path = config.out_dir.join(grid.name);
        write_atomic(&path, grid.to_csv().as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_grids_have_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let paths = emit_figure_data(&config).unwrap();
        assert_eq!(paths.len(), 8);
        for path in &paths {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.starts_with("x,series,y\n"));
            assert!(text.lines().count() > 2, "{} too short", path.display());
        }
    }

    #[test]
    fn empty_ranges_rejected() {
        for config in [
            RunConfig {
                fig_m_max: 0,
                ..RunConfig::default()
            },
            RunConfig {
                fig_nu_steps: 1,
                ..RunConfig::default()
            },
            RunConfig {
                fig_nu_min: 1.0,
                ..RunConfig::default()
            },
        ] {
            assert!(emit_figure_data(&config).is_err());
        }
    }
}
