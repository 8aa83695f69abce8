//! Run configuration: defaults, flat key=value config files, and
//! command-line overrides (which take precedence over the file).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Degrees-of-freedom handling for the Student-t layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuChoice {
    /// Fit by moment-matching start plus likelihood maximisation.
    Fit,
    Fixed(f64),
}

/// One risk factor: the instruments-file column it reads and whether its
/// distances are normalised to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub name: String,
    pub normalise: bool,
}

/// Full pipeline configuration. Config-file keys map 1:1 onto the field
/// names below.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub instruments: PathBuf,
    pub spreads: PathBuf,
    pub positions: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub window: usize,
    pub min_obs_frac: f64,
    pub clip_eps: f64,
    pub alpha: f64,
    pub quantiles: Vec<f64>,
    pub include_unconstrained: bool,
    pub nu: NuChoice,
    pub seed: u64,
    pub restarts: usize,
    pub cooling: f64,
    pub steps_per_temp: usize,
    pub unconstrained_cap: f64,
    pub restart_spread_tol: f64,
    pub day_count: f64,
    pub factors: Vec<FactorSpec>,
    pub spreads_in_bps: bool,
    pub log_returns: bool,
    pub recovery: f64,
    pub rate: f64,
    pub netting_floor: f64,
    // Homogeneous figure-grid parameters.
    pub fig_m_max: usize,
    pub fig_sigma: f64,
    pub fig_target_rho: f64,
    pub fig_sigma_beta: f64,
    pub fig_rho_beta: f64,
    pub fig_quantile: f64,
    pub fig_nu_min: f64,
    pub fig_nu_max: f64,
    pub fig_nu_steps: usize,
    pub fig_delta_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instruments: PathBuf::from("instruments.csv"),
            spreads: PathBuf::from("spreads.csv"),
            positions: None,
            out_dir: PathBuf::from("out"),
            window: 250,
            min_obs_frac: 0.8,
            clip_eps: 0.01,
            alpha: 0.99,
            quantiles: vec![0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999],
            include_unconstrained: true,
            nu: NuChoice::Fit,
            seed: 42,
            restarts: 20,
            cooling: 0.95,
            steps_per_temp: 400,
            unconstrained_cap: 10.0,
            restart_spread_tol: 1e-4,
            day_count: 250.0,
            factors: default_factors(),
            spreads_in_bps: false,
            log_returns: false,
            recovery: 0.4,
            rate: 0.0,
            netting_floor: 1e-6,
            fig_m_max: 10,
            fig_sigma: 0.25,
            fig_target_rho: 0.3,
            fig_sigma_beta: 0.1428,
            fig_rho_beta: 0.1972,
            fig_quantile: 0.95,
            fig_nu_min: 4.5,
            fig_nu_max: 60.0,
            fig_nu_steps: 40,
            fig_delta_steps: 41,
        }
    }
}

fn default_factors() -> Vec<FactorSpec> {
    ["isCDX", "isIG", "maturity_years", "series", "isIndex"]
        .iter()
        .map(|name| FactorSpec {
            name: (*name).to_string(),
            normalise: true,
        })
        .collect()
}

impl RunConfig {
    /// Builds a configuration from an optional config file plus ordered
    /// (key, value) overrides; later sources win.
    pub fn from_sources(
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = file {
            for (key, value) in parse_flat_file(path)? {
                config.apply(&key, &value)?;
            }
        }
        for (key, value) in overrides {
            config.apply(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies a single key=value setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Invalid(format!("config key '{key}': {what} '{value}'"));
        match key {
            "instruments" => self.instruments = PathBuf::from(value),
            "spreads" => self.spreads = PathBuf::from(value),
            "positions" => self.positions = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "window" => self.window = value.parse().map_err(|_| bad("invalid integer"))?,
            "min_obs_frac" => {
                self.min_obs_frac = value.parse().map_err(|_| bad("invalid number"))?
            }
            "clip_eps" => self.clip_eps = value.parse().map_err(|_| bad("invalid number"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("invalid number"))?,
            "quantiles" => {
                self.quantiles = value
                    .split(',')
                    .map(|q| q.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("invalid quantile list"))?;
            }
            "include_unconstrained" => {
                self.include_unconstrained = parse_bool(value).ok_or_else(|| bad("invalid flag"))?
            }
            "nu" => {
                self.nu = if value.eq_ignore_ascii_case("fit") {
                    NuChoice::Fit
                } else {
                    NuChoice::Fixed(value.parse().map_err(|_| bad("invalid number"))?)
                };
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("invalid integer"))?,
            "restarts" => self.restarts = value.parse().map_err(|_| bad("invalid integer"))?,
            "cooling" => self.cooling = value.parse().map_err(|_| bad("invalid number"))?,
            "steps_per_temp" => {
                self.steps_per_temp = value.parse().map_err(|_| bad("invalid integer"))?
            }
            "unconstrained_cap" => {
                self.unconstrained_cap = value.parse().map_err(|_| bad("invalid number"))?
            }
            "restart_spread_tol" => {
                self.restart_spread_tol = value.parse().map_err(|_| bad("invalid number"))?
            }
            "day_count" => self.day_count = value.parse().map_err(|_| bad("invalid number"))?,
            "factors" => {
                self.factors = value
                    .split(',')
                    .map(|item| {
                        let item = item.trim();
                        match item.strip_suffix(":raw") {
                            Some(name) => FactorSpec {
                                name: name.to_string(),
                                normalise: false,
                            },
                            None => FactorSpec {
                                name: item.to_string(),
                                normalise: true,
                            },
                        }
                    })
                    .collect();
            }
            "spreads_in_bps" => {
                self.spreads_in_bps = parse_bool(value).ok_or_else(|| bad("invalid flag"))?
            }
            "log_returns" => {
                self.log_returns = parse_bool(value).ok_or_else(|| bad("invalid flag"))?
            }
            "recovery" => self.recovery = value.parse().map_err(|_| bad("invalid number"))?,
            "rate" => self.rate = value.parse().map_err(|_| bad("invalid number"))?,
            "netting_floor" => {
                self.netting_floor = value.parse().map_err(|_| bad("invalid number"))?
            }
            "fig_m_max" => self.fig_m_max = value.parse().map_err(|_| bad("invalid integer"))?,
            "fig_sigma" => self.fig_sigma = value.parse().map_err(|_| bad("invalid number"))?,
            "fig_target_rho" => {
                self.fig_target_rho = value.parse().map_err(|_| bad("invalid number"))?
            }
            "fig_sigma_beta" => {
                self.fig_sigma_beta = value.parse().map_err(|_| bad("invalid number"))?
            }
            "fig_rho_beta" => {
                self.fig_rho_beta = value.parse().map_err(|_| bad("invalid number"))?
            }
            "fig_quantile" => {
                self.fig_quantile = value.parse().map_err(|_| bad("invalid number"))?
            }
            "fig_nu_min" => self.fig_nu_min = value.parse().map_err(|_| bad("invalid number"))?,
            "fig_nu_max" => self.fig_nu_max = value.parse().map_err(|_| bad("invalid number"))?,
            "fig_nu_steps" => {
                self.fig_nu_steps = value.parse().map_err(|_| bad("invalid integer"))?
            }
            "fig_delta_steps" => {
                self.fig_delta_steps = value.parse().map_err(|_| bad("invalid integer"))?
            }
            other => {
                return Err(Error::Invalid(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            return Err(Error::Invalid("quantile list is empty".into()));
        }
        for &q in &self.quantiles {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Invalid(format!(
                    "quantile {q} must lie in (0, 1)"
                )));
            }
        }
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!(
                "alpha {} must lie in (0.5, 1)",
                self.alpha
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Invalid(format!(
                "clip_eps {} must lie in (0, 1)",
                self.clip_eps
            )));
        }
        if !(self.min_obs_frac > 0.0 && self.min_obs_frac <= 1.0) {
            return Err(Error::Invalid(format!(
                "min_obs_frac {} must lie in (0, 1]",
                self.min_obs_frac
            )));
        }
        if self.factors.is_empty() {
            return Err(Error::Invalid("factor list is empty".into()));
        }
        if self.window < self.factors.len() + 1 {
            return Err(Error::Invalid(format!(
                "window {} too short for {} factors",
                self.window,
                self.factors.len()
            )));
        }
        if let NuChoice::Fixed(nu) = self.nu {
            if !(nu > 2.0) {
                return Err(Error::Invalid(format!("fixed nu {nu} must exceed 2")));
            }
        }
        Ok(())
    }

    pub fn search_config(&self) -> crate::scenario::SearchConfig {
        crate::scenario::SearchConfig {
            restarts: self.restarts,
            cooling: self.cooling,
            steps_per_temp: self.steps_per_temp,
            seed: self.seed,
            unconstrained_cap: self.unconstrained_cap,
            restart_spread_tol: self.restart_spread_tol,
            ..crate::scenario::SearchConfig::default()
        }
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Parses a flat `key = value` file; '#' starts a comment, blank lines are
/// skipped, later duplicates of a key win.
pub fn parse_flat_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut seen = BTreeMap::new();
    let mut order = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: path.display().to_string(),
            row: lineno + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if seen.insert(key.clone(), value.clone()).is_none() {
            order.push(key.clone());
        }
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let v = seen[&k].clone();
            (k, v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let config = RunConfig::from_sources(None, &[]).unwrap();
        assert_eq!(config.window, 250);
        assert_eq!(config.factors.len(), 5);
        assert_eq!(config.quantiles.len(), 7);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "window = 100\nseed = 7 # trailing comment\n\n# full line\nalpha=0.95\n").unwrap();
        let config = RunConfig::from_sources(
            Some(&path),
            &[("window".to_string(), "120".to_string())],
        )
        .unwrap();
        assert_eq!(config.window, 120);
        assert_eq!(config.seed, 7);
        assert_eq!(config.alpha, 0.95);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut config = RunConfig::default();
        assert!(config.apply("windw", "100").is_err());
    }

    #[test]
    fn factor_list_with_raw_suffix() {
        let mut config = RunConfig::default();
        config.apply("factors", "isCDX,maturity_years:raw").unwrap();
        assert_eq!(config.factors.len(), 2);
        assert!(config.factors[0].normalise);
        assert!(!config.factors[1].normalise);
        assert_eq!(config.factors[1].name, "maturity_years");
    }

    #[test]
    fn bad_quantiles_rejected() {
        let mut config = RunConfig::default();
        config.apply("quantiles", "0.5,1.5").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn malformed_config_line_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "window = 100\nnonsense line\n").unwrap();
        match parse_flat_file(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
