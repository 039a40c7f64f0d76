use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ingarch::estimation::{
    actuals_at, align, fit, predict, score, FitConfig, FitReport, LinkSpec, ModelKind, Prediction, PreparedPanel,
    Score, REPORT_SCHEMA_VERSION,
};
use ingarch::panel::{read_csv, write_csv, Panel};
use ingarch::simulate::simulate_panel;
use ingarch::verify::{
    bijection_check, gap_checks, latent_cov_report, obs_cov_report, recursion_sweep, simulate_paths, BijectionCheck,
    CovReport, GapCheck, LiftedModel, RecursionSweep,
};
use ingarch::{nb, poisson, RngStream};

use crate::config::RunConfig;

fn read_panel(path: &Path) -> Result<Panel> {
    let file = File::open(path).with_context(|| format!("opening panel {}", path.display()))?;
    Ok(read_csv(std::io::BufReader::new(file))?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(dir.join(name))
}

fn link(cfg: &RunConfig, panel: &Panel) -> Result<LinkSpec> {
    let spec = match &cfg.covariates {
        Some(names) => LinkSpec { covariates: names.clone() },
        None => LinkSpec::all(panel),
    };
    spec.columns(panel)?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub panel: PathBuf,
    pub latent: PathBuf,
}

/// Writes `panel.csv` and the ground truth `latent.csv` into the output directory.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let seed = cfg.require_seed()?;
    let out = cfg.require_out()?;
    let sim = simulate_panel(&cfg.design(), seed)?;
    let mut w = create(out, "panel.csv")?;
    write_csv(&sim.panel, &mut w)?;
    w.flush()?;
    let mut latent =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(out, "latent.csv")?);
    for row in &sim.latent {
        latent.serialize(row)?;
    }
    latent.flush()?;
    Ok(SimulateOutput { panel: out.join("panel.csv"), latent: out.join("latent.csv") })
}

/// Fits the configured model. With a horizon, periods from the horizon on
/// are held out and the horizon period is scored.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport> {
    let panel = read_panel(cfg.require_panel()?)?;
    let spec = link(cfg, &panel)?;
    let train = match cfg.horizon {
        Some(h) if h >= 1 => panel.truncate(h - 1),
        Some(_) => bail!("the horizon must be a period >= 1"),
        None => panel.clone(),
    };
    let prepared = PreparedPanel::new(&train, &spec)?;
    let config = FitConfig { seed: cfg.seed.unwrap_or(0), starts: cfg.starts, ..FitConfig::default() };
    let mut report = fit(&prepared, cfg.model, cfg.delta_policy, &config)?;
    if let Some(h) = cfg.horizon {
        report.holdout = Some(score_period(&report, &panel, h)?.1);
    }
    if let Some(out) = &cfg.out {
        write_json(out, "fit.json", &report)?;
    }
    Ok(report)
}

fn score_period(report: &FitReport, panel: &Panel, period: u32) -> Result<(Vec<Prediction>, Score)> {
    let preds = predict(&report.fitted, panel, period)?;
    let actuals = actuals_at(panel, period);
    let scored = score(&align(&preds, &actuals)?, &actuals)?;
    Ok((preds, scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub model: ModelKind,
    pub period: u32,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub predictions: PathBuf,
    pub scores: PathBuf,
    pub report: ScoreReport,
}

/// Loads a fit report and predicts every entity with a record at the horizon.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictOutput> {
    let fit_path = cfg.fit.as_deref().context("a fit report is required (--fit or `fit = ...`)")?;
    let text = fs::read_to_string(fit_path).with_context(|| format!("reading {}", fit_path.display()))?;
    let report: FitReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", fit_path.display()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        bail!("fit report schema {} is not the supported version {REPORT_SCHEMA_VERSION}", report.schema_version);
    }
    let panel = read_panel(cfg.require_panel()?)?;
    report.fitted.link().columns(&panel)?;
    let period = cfg.require_horizon()?;
    let out = cfg.require_out()?;
    let (preds, scored) = score_period(&report, &panel, period)?;

    let mut w =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(out, "predictions.csv")?);
    w.write_record(["entity_id", "period", "mean", "latent_mean", "claims", "logpmf"])?;
    let actuals = actuals_at(&panel, period);
    for p in &preds {
        let actual = actuals.iter().find(|(id, _)| id == &p.entity_id).map(|&(_, z)| z);
        let logpmf = actual.map(|z| p.law.logpmf(z)).transpose()?;
        w.write_record([
            p.entity_id.clone(),
            p.period.to_string(),
            p.mean.to_string(),
            p.latent_mean.to_string(),
            actual.map(|z| z.to_string()).unwrap_or_default(),
            logpmf.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let report =
        ScoreReport { schema_version: REPORT_SCHEMA_VERSION, model: report.fitted.model, period, score: scored };
    let scores = write_json(out, "scores.json", &report)?;
    Ok(PredictOutput { predictions: out.join("predictions.csv"), scores, report })
}

/// Closed-form moment table as CSV text: one row per period, with a
/// `cov_z_lag{k}` column per configured lag (empty past the horizon).
pub fn cmd_moments(cfg: &RunConfig) -> Result<String> {
    let rows: Vec<(usize, [f64; 4], Vec<f64>)> = match cfg.lifted_model()? {
        LiftedModel::Poisson(p) => poisson::moments(&p, p.horizon())?
            .into_iter()
            .map(|m| (m.t, [m.mean_theta, m.var_theta, m.mean_z, m.var_z], m.autocov_z))
            .collect(),
        LiftedModel::Nb(p) => nb::moments(&p, p.len())?
            .into_iter()
            .map(|m| (m.t, [m.mean_theta, m.var_theta, m.mean_z, m.var_z], m.autocov_z))
            .collect(),
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header: Vec<String> = ["t", "mean_theta", "var_theta", "mean_z", "var_z"].map(String::from).to_vec();
    header.extend(cfg.lags.iter().map(|k| format!("cov_z_lag{k}")));
    w.write_record(&header)?;
    for (t, values, autocov) in rows {
        let mut record = vec![t.to_string()];
        record.extend(values.iter().map(f64::to_string));
        for &k in &cfg.lags {
            let cell = match k {
                0 => Some(values[3]),
                k => autocov.get(k - 1).copied(),
            };
            record.push(cell.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    if let Some(out) = &cfg.out {
        let mut f = create(out, "moments.csv")?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSeries {
    Theta,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovCheck {
    pub series: CovSeries,
    #[serde(flatten)]
    pub report: CovReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub model: ModelKind,
    pub seed: u64,
    pub replications: usize,
    pub lags: Vec<usize>,
    /// Why no covariance check ran, when the model has no linear lift.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lift_refused: Option<String>,
    pub cov_reports: Vec<CovCheck>,
    pub gap_scans: Vec<GapCheck>,
    pub recursion: RecursionSweep,
    pub bijection: BijectionCheck,
    pub pass: bool,
}

/// Monte Carlo covariance checks, convex-order scans along a path, NB
/// recursion sweeps and coefficient-map round trips.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let seed = cfg.require_seed()?;
    let root = RngStream::root(seed);
    let model = cfg.lifted_model()?;

    let mut lift_refused = None;
    let mut cov_reports = Vec::new();
    let lags: Vec<usize> = cfg.lags.iter().copied().filter(|&k| k >= 1).collect();
    if !lags.is_empty() {
        match model.theory() {
            Err(ingarch::Error::LiftRefused(msg)) => lift_refused = Some(msg),
            Err(e) => return Err(e.into()),
            Ok(theory) => {
                let paths = simulate_paths(&model, cfg.verify_n, root.split_str("verify-cov"))?;
                let first = model.first_period();
                let last = first + model.n_periods() - 1;
                for t in first..=last {
                    for &k in lags.iter().filter(|&&k| t + k <= last) {
                        cov_reports.push(CovCheck {
                            series: CovSeries::Theta,
                            report: latent_cov_report(&paths, &theory, t, k)?,
                        });
                        cov_reports
                            .push(CovCheck { series: CovSeries::Z, report: obs_cov_report(&paths, &theory, t, k)? });
                    }
                }
            }
        }
    }
    let gap_scans = gap_checks(&model, root.split_str("verify-gap"))?;
    let recursion = recursion_sweep(cfg.recursion_sweeps, 20, root.split_str("verify-recursion"))?;
    let bijection = bijection_check(cfg.bijection_draws, root.split_str("verify-bijection"))?;
    let pass = lift_refused.is_none()
        && cov_reports.iter().all(|c| c.report.pass)
        && gap_scans.iter().all(|g| g.pass)
        && recursion.pass
        && bijection.pass;
    let report = VerifyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: cfg.model,
        seed,
        replications: cfg.verify_n,
        lags: cfg.lags.clone(),
        lift_refused,
        cov_reports,
        gap_scans,
        recursion,
        bijection,
        pass,
    };
    if let Some(out) = &cfg.out {
        write_json(out, "verify.json", &report)?;
    }
    Ok(report)
}
