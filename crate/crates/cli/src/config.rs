//! Run configuration: a flat TOML document whose keys mirror [`RunConfig`],
//! overridden field by field from the command line.
//!
//! ```toml
//! # NB panel, six periods
//! model = "nb"
//! seed = 7
//! periods = 6
//! coefficients = [-1.0, 0.5]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ingarch::estimation::{DeltaPolicy, ModelKind};
use ingarch::nb::NbParams;
use ingarch::poisson::PoissonParams;
use ingarch::simulate::PanelDesign;
use ingarch::verify::LiftedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Panel CSV read by `fit` and `predict`.
    pub panel: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Fit report read by `predict`.
    pub fit: Option<PathBuf>,
    pub seed: Option<u64>,
    pub delta_policy: DeltaPolicy,
    /// Link covariate columns; all panel covariates when absent.
    pub covariates: Option<Vec<String>>,
    /// Hold-out period for `fit` and target period for `predict`.
    pub horizon: Option<u32>,
    pub verify_n: usize,
    pub lags: Vec<usize>,
    pub starts: usize,

    pub n_entities: usize,
    pub periods: u32,
    /// Per-group link coefficients for `simulate`.
    pub coefficients: Vec<f64>,
    pub delta: f64,
    /// Poisson evolution intercept; `(1 - delta) mu` when absent.
    pub intercept: Option<f64>,
    pub a_anchor: f64,
    pub mu: f64,
    /// Per-period `p` (Poisson, from period 0) or `lambda` (NB, from period 1)
    /// for `moments` and `verify`; a single value is repeated.
    pub rate: Vec<f64>,
    /// Per-period exposure indicators (0 or 1), repeated like `rate`.
    pub exposure: Vec<u8>,
    pub exposure_prob: f64,
    pub absent_prob: f64,
    pub bijection_draws: usize,
    pub recursion_sweeps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let design = PanelDesign::default();
        Self {
            model: ModelKind::Nb,
            panel: None,
            out: None,
            fit: None,
            seed: None,
            delta_policy: DeltaPolicy::default(),
            covariates: None,
            horizon: None,
            verify_n: 200_000,
            lags: vec![1, 2],
            starts: 5,
            n_entities: design.n_entities,
            periods: design.periods,
            coefficients: design.coefficients,
            delta: design.delta,
            intercept: None,
            a_anchor: design.a_anchor,
            mu: design.mu,
            rate: vec![0.5],
            exposure: vec![1],
            exposure_prob: design.exposure_prob,
            absent_prob: design.absent_prob,
            bijection_draws: 1000,
            recursion_sweeps: 1000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.context("a seed is required (--seed or `seed = ...`)")
    }

    pub fn require_panel(&self) -> Result<&Path> {
        self.panel.as_deref().context("a panel CSV is required (--panel or `panel = ...`)")
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().context("an output directory is required (--out or `out = ...`)")
    }

    pub fn require_horizon(&self) -> Result<u32> {
        self.horizon.context("a horizon period is required (--horizon or `horizon = ...`)")
    }

    pub fn design(&self) -> PanelDesign {
        PanelDesign {
            model: self.model,
            n_entities: self.n_entities,
            periods: self.periods,
            coefficients: self.coefficients.clone(),
            delta: self.delta,
            delta_policy: self.delta_policy,
            a_anchor: self.a_anchor,
            mu: self.mu,
            exposure_prob: self.exposure_prob,
            absent_prob: self.absent_prob,
        }
    }

    fn per_period<T: Copy>(name: &str, values: &[T], n: usize) -> Result<Vec<T>> {
        match values.len() {
            1 => Ok(vec![values[0]; n]),
            len if len == n => Ok(values.to_vec()),
            len => bail!("`{name}` needs 1 or {n} values, got {len}"),
        }
    }

    /// The single-entity model used by `moments` and `verify`. Poisson
    /// vectors cover periods `0..=periods`, NB vectors `1..=periods`.
    pub fn lifted_model(&self) -> Result<LiftedModel> {
        let policy = self.model.effective_policy(self.delta_policy);
        let delta = if policy == DeltaPolicy::FixedOne { 1.0 } else { self.delta };
        if self.periods == 0 {
            bail!("`periods` must be at least 1");
        }
        if self.model.is_poisson() {
            let n = self.periods as usize + 1;
            let p = Self::per_period("rate", &self.rate, n)?;
            let w = exposure_flags(&Self::per_period("exposure", &self.exposure, n)?)?;
            let params = if policy == DeltaPolicy::StationaryFromAnchor && self.intercept.is_none() {
                PoissonParams::stationary(self.mu, delta, p, w)?
            } else {
                PoissonParams::new(self.mu, vec![delta; n], p, w, self.intercept.map(|c| vec![c; n]))?
            };
            Ok(LiftedModel::Poisson(params))
        } else {
            if self.intercept.is_some() {
                bail!("`intercept` applies to the Poisson model only");
            }
            let n = self.periods as usize;
            let lambda = Self::per_period("rate", &self.rate, n)?;
            let w = exposure_flags(&Self::per_period("exposure", &self.exposure, n)?)?;
            Ok(LiftedModel::Nb(NbParams::new(self.a_anchor, vec![delta; n], lambda, w)?))
        }
    }
}

fn exposure_flags(values: &[u8]) -> Result<Vec<bool>> {
    values
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => bail!("exposure indicators must be 0 or 1, got {other}"),
        })
        .collect()
}
