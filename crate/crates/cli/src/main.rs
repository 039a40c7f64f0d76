use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ingarch::estimation::{DeltaPolicy, ModelKind};
use ingarch_cli::{
    cmd_fit, cmd_moments, cmd_predict, cmd_simulate, cmd_verify, exit_code, RunConfig, EXIT_OPTIMIZATION,
    EXIT_VERIFY_FAILED,
};

#[derive(Debug, Parser)]
#[command(name = "ingarch", version, about = "Poisson and negative-binomial INGARCH(1,1) panel models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// poisson, nb or random_effects.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    #[arg(long, global = true)]
    panel: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    horizon: Option<u32>,
    /// free_scalar, stationary_from_anchor or fixed_one.
    #[arg(long, global = true)]
    delta_policy: Option<DeltaPolicy>,
    /// Monte Carlo replications for verify.
    #[arg(long, global = true)]
    verify_n: Option<usize>,
    /// Comma-separated lags; an empty string disables the covariance checks.
    #[arg(long, global = true)]
    lags: Option<String>,
    /// Fit report consumed by predict.
    #[arg(long, global = true)]
    fit: Option<PathBuf>,
    /// Comma-separated link covariates.
    #[arg(long, global = true)]
    covariates: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a panel and its latent path (panel.csv, latent.csv).
    Simulate,
    /// Fit a model to a panel CSV (fit.json).
    Fit,
    /// Predict the horizon period from a fit report (predictions.csv, scores.json).
    Predict,
    /// Closed-form moment table (moments.csv).
    Moments,
    /// Monte Carlo and analytic checks (verify.json).
    Verify,
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty()).collect()
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(model, delta_policy);
        set!(panel, seed, out, horizon, fit);
        if let Some(n) = self.verify_n {
            cfg.verify_n = n;
        }
        if let Some(lags) = &self.lags {
            cfg.lags = split_list(lags).into_iter().map(str::parse).collect::<Result<_, _>>()?;
        }
        if let Some(cols) = &self.covariates {
            cfg.covariates = Some(split_list(cols).into_iter().map(String::from).collect());
        }
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let cfg = cli.run_config()?;
    Ok(match cli.command {
        Command::Simulate => {
            let out = cmd_simulate(&cfg)?;
            eprintln!("wrote {} and {}", out.panel.display(), out.latent.display());
            0
        }
        Command::Fit => {
            let report = cmd_fit(&cfg)?;
            if cfg.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            if report.converged {
                0
            } else {
                eprintln!("optimizer stopped after {} iterations without converging", report.iterations);
                EXIT_OPTIMIZATION
            }
        }
        Command::Predict => {
            let out = cmd_predict(&cfg)?;
            eprintln!(
                "period {}: n = {}, mse = {}, loglik = {}",
                out.report.period, out.report.score.n, out.report.score.mse, out.report.score.loglik
            );
            0
        }
        Command::Moments => {
            let table = cmd_moments(&cfg)?;
            if cfg.out.is_none() {
                print!("{table}");
            }
            0
        }
        Command::Verify => {
            let report = cmd_verify(&cfg)?;
            if cfg.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            eprintln!("verification {}", if report.pass { "PASS" } else { "FAIL" });
            if report.pass {
                0
            } else {
                EXIT_VERIFY_FAILED
            }
        }
    })
}

fn main() -> ExitCode {
    // Usage errors exit with 1 so that 2 keeps meaning an optimization failure.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
