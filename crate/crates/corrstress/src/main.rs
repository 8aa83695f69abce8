//! Command-line front end for the correlation stress engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use corrstress::credit::{self, TrancheQuote};
use corrstress::pipeline::{self, config::RunConfig, figures, io};

#[derive(Parser)]
#[command(
    name = "corrstress",
    about = "Correlation stress testing: factor-distance correlation models, \
             worst-case scenario search and joint correlation/volatility VaR",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the coefficient calibration over the spread history and write
    /// the coefficient series plus its change distribution
    Calibrate(RunArgs),
    /// Run the full stress pipeline and write report.json / report_table.csv
    Stress(RunArgs),
    /// Emit the homogeneous-portfolio figure grids as CSV files
    Figures(RunArgs),
    /// Convert an (upfront, running) tranche quote into its equivalent
    /// running spread, with a survival-probability diagnostic
    PriceTranche(PriceTrancheArgs),
}

/// Options shared by the pipeline verbs. Flags mirror config-file keys and
/// take precedence over them.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instruments CSV (id,isCDX,isIG,maturity_years,series,isIndex)
    #[arg(long)]
    instruments: Option<PathBuf>,
    /// Spread panel CSV (date,id,spread | tranche upfront/running columns)
    #[arg(long)]
    spreads: Option<PathBuf>,
    /// Positions CSV (id,net_notional,side)
    #[arg(long)]
    positions: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Rolling calibration window length
    #[arg(long)]
    window: Option<usize>,
    /// Clipping floor for nonpositive empirical correlations
    #[arg(long)]
    clip_eps: Option<f64>,
    /// VaR confidence level
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated Mahalanobis constraint quantiles
    #[arg(long)]
    quantiles: Option<String>,
    /// Degrees of freedom: a number, or "fit"
    #[arg(long)]
    nu: Option<String>,
    /// Search seed
    #[arg(long)]
    seed: Option<u64>,
    /// Annealing restarts
    #[arg(long)]
    restarts: Option<usize>,
    /// Trading days per year for horizon conversions
    #[arg(long)]
    day_count: Option<f64>,
    /// Minimum fraction of valid window observations per instrument
    #[arg(long)]
    min_obs_frac: Option<f64>,
    /// Treat plain spread values as basis points
    #[arg(long)]
    spreads_in_bps: bool,
    /// Use log returns instead of simple returns
    #[arg(long)]
    log_returns: bool,
    /// Recovery rate for credit conversions
    #[arg(long)]
    recovery: Option<f64>,
    /// Continuously compounded risk-free rate
    #[arg(long)]
    rate: Option<f64>,
    /// Generic overrides: repeatable key=value pairs for any config key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn build_config(&self) -> corrstress::Result<RunConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overrides.push((key.to_string(), v));
            }
        };
        push("instruments", self.instruments.as_deref().map(display_path));
        push("spreads", self.spreads.as_deref().map(display_path));
        push("positions", self.positions.as_deref().map(display_path));
        push("out_dir", self.out_dir.as_deref().map(display_path));
        push("window", self.window.map(|v| v.to_string()));
        push("clip_eps", self.clip_eps.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("quantiles", self.quantiles.clone());
        push("nu", self.nu.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("restarts", self.restarts.map(|v| v.to_string()));
        push("day_count", self.day_count.map(|v| v.to_string()));
        push("min_obs_frac", self.min_obs_frac.map(|v| v.to_string()));
        if self.spreads_in_bps {
            push("spreads_in_bps", Some("true".to_string()));
        }
        if self.log_returns {
            push("log_returns", Some("true".to_string()));
        }
        push("recovery", self.recovery.map(|v| v.to_string()));
        push("rate", self.rate.map(|v| v.to_string()));
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                corrstress::Error::Invalid(format!("--set expects key=value, got '{pair}'"))
            })?;
            overrides.push((key.trim().to_string(), value.trim().to_string()));
        }
        RunConfig::from_sources(self.config.as_deref(), &overrides)
    }
}

fn display_path(p: &std::path::Path) -> String {
    p.display().to_string()
}

#[derive(Args)]
struct PriceTrancheArgs {
    /// Upfront payment, decimal of tranche notional
    #[arg(long)]
    upfront: f64,
    /// Running spread, decimal per annum
    #[arg(long)]
    running: f64,
    /// Maturity in years
    #[arg(long)]
    maturity: f64,
    /// Continuously compounded risk-free rate
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    /// Recovery rate
    #[arg(long, default_value_t = 0.4)]
    recovery: f64,
    /// Tranche attachment point
    #[arg(long, default_value_t = 0.0)]
    attachment: f64,
    /// Tranche detachment point
    #[arg(long, default_value_t = 1.0)]
    detachment: f64,
    /// Base correlation at the attachment point
    #[arg(long, default_value_t = 0.0)]
    base_corr_attach: f64,
    /// Base correlation at the detachment point
    #[arg(long, default_value_t = 0.0)]
    base_corr_detach: f64,
    /// Index spread, decimal per annum (enables the survival diagnostic)
    #[arg(long)]
    index_spread: Option<f64>,
    /// Names in the underlying pool (reserved for finite-pool pricing)
    #[arg(long, default_value_t = 125)]
    pool_size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> corrstress::Result<()> {
    match cli.command {
        Command::Calibrate(args) => {
            let config = args.build_config()?;
            let artifacts = pipeline::run_calibration(&config)?;
            for w in &artifacts.warnings {
                eprintln!("warning: {w}");
            }
            let mut csv = String::from("date");
            for name in &artifacts.factor_names {
                csv.push(',');
                csv.push_str(name);
            }
            csv.push('\n');
            for dated in &artifacts.beta_series {
                csv.push_str(&dated.date.to_string());
                for b in dated.value.as_slice() {
                    csv.push_str(&format!(",{b}"));
                }
                csv.push('\n');
            }
            let series_path = config.out_dir.join("beta_series.csv");
            io::write_atomic(&series_path, csv.as_bytes())?;

            let est = &artifacts.estimate;
            let summary = serde_json::json!({
                "factor_names": artifacts.factor_names,
                "beta_bar": est.mean.as_slice(),
                "sigma_beta": est.sigma_beta,
                "rho_beta": est.rho_beta,
                "degenerate": est.degenerate,
                "samples": est.samples,
                "covariance": (0..est.cov.nrows())
                    .map(|i| est.cov.row(i).iter().cloned().collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
            });
            let dist_path = config.out_dir.join("beta_distribution.json");
            io::write_atomic(
                &dist_path,
                serde_json::to_string_pretty(&summary)
                    .expect("static structure")
                    .as_bytes(),
            )?;
            println!("wrote {}", series_path.display());
            println!("wrote {}", dist_path.display());
            Ok(())
        }
        Command::Stress(args) => {
            let config = args.build_config()?;
            let artifacts = pipeline::run_stress(&config)?;
            for w in &artifacts.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", artifacts.report_json.display());
            println!("wrote {}", artifacts.report_csv.display());
            let base = &artifacts.report.base;
            println!(
                "base VaR {:.6}, base t-VaR {:.6} (nu = {:.4}, {})",
                base.var, base.t_var, artifacts.report.nu, artifacts.report.nu_source
            );
            for row in &artifacts.report.rows {
                let label = row
                    .quantile
                    .map(|q| q.to_string())
                    .unwrap_or_else(|| "unconstrained".into());
                println!(
                    "quantile {label}: VaR {:.6} ({:+.2}%), joint t-VaR {:.6} ({:+.2}%)",
                    row.var, row.change_pct, row.joint_t_var, row.joint_change_pct
                );
            }
            Ok(())
        }
        Command::Figures(args) => {
            let config = args.build_config()?;
            let paths = figures::emit_figure_data(&config)?;
            for p in &paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::PriceTranche(args) => {
            let quote = TrancheQuote::new(
                args.attachment,
                args.detachment,
                args.upfront,
                args.running,
                args.base_corr_attach,
                args.base_corr_detach,
                args.index_spread.unwrap_or(0.0),
                args.recovery,
                args.maturity,
                args.rate,
            )?;
            let eq = credit::tranche_equivalent_spread(&quote)?;
            println!(
                "equivalent spread: {:.8} ({:.4} bp), {} iterations, residual {:.3e}",
                eq.spread,
                eq.spread * 1e4,
                eq.iterations,
                eq.residual
            );
            if args.index_spread.is_some() {
                let q = credit::tranche_survival_at_maturity(&quote, args.pool_size)?;
                println!("tranche survival at maturity: {q:.8}");
            }
            Ok(())
        }
    }
}
