//! Conditional maximum likelihood for panels of count series.
//!
//! Covariates enter through `p = logistic(<x, xi>)` (Poisson) or
//! `lambda = exp(<x, zeta>)` (NB). The unconstrained parameter vector is
//!
//! ```text
//! Poisson: [xi..., ln mu, u_delta]
//! NB:      [zeta..., u_delta, ln a]
//! ```
//!
//! with `delta = eps + (1 - eps) logistic(u_delta)`; `u_delta` is dropped under
//! [`DeltaPolicy::FixedOne`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::special::{compensated_sum, log_sum_exp, logistic, logit};
use crate::kernels::{nb_logpmf, poisson_logpmf, RngStream};
use crate::nb::{self, NbParams};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::panel::{
    apply_missingness, nb_series_loglik, poisson_integrated, run_nb_series, EffectivePeriod, EntitySeries,
    MissingPolicy, Panel,
};
use crate::poisson::{self, PoissonParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Lower bound of the squashed evolution weight.
pub const DELTA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Poisson,
    Nb,
    /// NB with `delta = 1`: the static Poisson-Gamma random-effects model.
    RandomEffects,
}

impl ModelKind {
    pub fn is_poisson(self) -> bool {
        self == ModelKind::Poisson
    }

    /// The policy actually applied; random effects always fix `delta = 1`.
    pub fn effective_policy(self, policy: DeltaPolicy) -> DeltaPolicy {
        match self {
            ModelKind::RandomEffects => DeltaPolicy::FixedOne,
            _ => policy,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(ModelKind::Poisson),
            "nb" => Ok(ModelKind::Nb),
            "random_effects" => Ok(ModelKind::RandomEffects),
            _ => Err(Error::Schema(format!("unknown model {s:?} (poisson, nb, random_effects)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    /// One weight shared by every period.
    FreeScalar,
    /// Poisson: the anchor weight `delta0` fixes all later weights through
    /// the variance-stationarity condition. NB: one shared weight, which the
    /// stationary recursion already makes variance-stationary.
    #[default]
    StationaryFromAnchor,
    FixedOne,
}

impl std::str::FromStr for DeltaPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free_scalar" => Ok(DeltaPolicy::FreeScalar),
            "stationary_from_anchor" => Ok(DeltaPolicy::StationaryFromAnchor),
            "fixed_one" => Ok(DeltaPolicy::FixedOne),
            _ => Err(Error::Schema(format!(
                "unknown delta policy {s:?} (free_scalar, stationary_from_anchor, fixed_one)"
            ))),
        }
    }
}

/// Which panel covariate columns enter the link, in coefficient order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub covariates: Vec<String>,
}

impl LinkSpec {
    pub fn all(panel: &Panel) -> Self {
        Self { covariates: panel.covariate_names.clone() }
    }

    /// Column indices of the link covariates; unknown names are a schema error.
    pub fn columns(&self, panel: &Panel) -> Result<Vec<usize>> {
        self.covariates
            .iter()
            .map(|name| {
                panel
                    .covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Schema(format!("covariate column {name:?} not in the panel")))
            })
            .collect()
    }
}

pub fn squash_delta(u: f64) -> f64 {
    DELTA_FLOOR + (1.0 - DELTA_FLOOR) * logistic(u)
}

pub fn unsquash_delta(delta: f64) -> f64 {
    logit((delta - DELTA_FLOOR) / (1.0 - DELTA_FLOOR))
}

fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// One entity after missingness resolution, with the link covariates selected.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEntity {
    pub entity_id: String,
    pub periods: Vec<EffectivePeriod>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPanel {
    pub link: LinkSpec,
    pub entities: Vec<PreparedEntity>,
}

impl PreparedPanel {
    pub fn new(panel: &Panel, link: &LinkSpec) -> Result<Self> {
        let cols = link.columns(panel)?;
        let entities = panel.entities.iter().map(|e| prepare_entity(e, &cols)).collect::<Result<Vec<_>>>()?;
        Ok(Self { link: link.clone(), entities })
    }

    pub fn n_observations(&self) -> usize {
        self.entities.iter().flat_map(|e| &e.periods).filter(|p| p.use_in_likelihood).count()
    }

    /// Copies each entity `times` times; used to check additivity.
    pub fn replicate(&self, times: usize) -> Self {
        let entities = (0..times).flat_map(|_| self.entities.iter().cloned()).collect();
        Self { link: self.link.clone(), entities }
    }
}

fn prepare_entity(series: &EntitySeries, cols: &[usize]) -> Result<PreparedEntity> {
    let mut periods = apply_missingness(series, MissingPolicy::AsNoExposure)?;
    for p in &mut periods {
        p.covariates = cols.iter().map(|&c| p.covariates[c]).collect();
    }
    Ok(PreparedEntity { entity_id: series.entity_id.clone(), periods })
}

/// Parameters on their natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    /// `xi` (Poisson) or `zeta` (NB, random effects).
    pub coefficients: Vec<f64>,
    /// `delta0` under the Poisson stationary policy, otherwise the shared weight.
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a_anchor: Option<f64>,
}

/// Everything needed to evaluate or predict with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: ModelKind,
    pub delta_policy: DeltaPolicy,
    pub covariates: Vec<String>,
    pub estimates: Estimates,
}

impl FittedModel {
    pub fn link(&self) -> LinkSpec {
        LinkSpec { covariates: self.covariates.clone() }
    }

    fn policy(&self) -> DeltaPolicy {
        self.model.effective_policy(self.delta_policy)
    }
}

/// Number of unconstrained parameters.
pub fn n_params(n_cov: usize, model: ModelKind, policy: DeltaPolicy) -> usize {
    let free_delta = usize::from(model.effective_policy(policy) != DeltaPolicy::FixedOne);
    n_cov + 1 + free_delta
}

pub fn constrain(theta: &[f64], n_cov: usize, model: ModelKind, policy: DeltaPolicy) -> Result<Estimates> {
    if theta.len() != n_params(n_cov, model, policy) {
        return Err(Error::domain(format!(
            "expected {} parameters, got {}",
            n_params(n_cov, model, policy),
            theta.len()
        )));
    }
    if let Some(x) = theta.iter().find(|x| x.is_nan()) {
        return Err(Error::domain(format!("parameter vector contains {x}")));
    }
    let fixed = model.effective_policy(policy) == DeltaPolicy::FixedOne;
    let coefficients = theta[..n_cov].to_vec();
    let rest = &theta[n_cov..];
    Ok(if model.is_poisson() {
        Estimates {
            coefficients,
            delta: if fixed { 1.0 } else { squash_delta(rest[1]) },
            mu: Some(rest[0].exp()),
            a_anchor: None,
        }
    } else if fixed {
        Estimates { coefficients, delta: 1.0, mu: None, a_anchor: Some(rest[0].exp()) }
    } else {
        Estimates { coefficients, delta: squash_delta(rest[0]), mu: None, a_anchor: Some(rest[1].exp()) }
    })
}

pub fn unconstrain(est: &Estimates, model: ModelKind, policy: DeltaPolicy) -> Result<Vec<f64>> {
    let fixed = model.effective_policy(policy) == DeltaPolicy::FixedOne;
    let mut theta = est.coefficients.clone();
    if model.is_poisson() {
        theta.push(est.mu.ok_or_else(|| Error::domain("Poisson estimates need mu"))?.ln());
        if !fixed {
            theta.push(unsquash_delta(est.delta));
        }
    } else {
        if !fixed {
            theta.push(unsquash_delta(est.delta));
        }
        theta.push(est.a_anchor.ok_or_else(|| Error::domain("NB estimates need a_anchor"))?.ln());
    }
    Ok(theta)
}

/// Model parameters for one entity over `eff` plus `extra` unobserved
/// trailing periods whose covariates and exposures are given.
fn entity_poisson_params(
    est: &Estimates,
    policy: DeltaPolicy,
    eff: &[EffectivePeriod],
    tail: Option<(&[f64], bool)>,
) -> Result<PoissonParams> {
    let mu = est.mu.ok_or_else(|| Error::domain("Poisson estimates need mu"))?;
    let mut p = Vec::with_capacity(eff.len() + 2);
    let mut w = Vec::with_capacity(eff.len() + 2);
    let first_x = eff.first().map(|e| e.covariates.as_slice()).or(tail.map(|t| t.0));
    let first_x = first_x.ok_or_else(|| Error::domain("empty series"))?;
    p.push(logistic(dot(first_x, &est.coefficients)));
    w.push(true);
    for e in eff {
        p.push(logistic(dot(&e.covariates, &est.coefficients)));
        w.push(e.use_in_filter);
    }
    if let Some((x, exposed)) = tail {
        p.push(logistic(dot(x, &est.coefficients)));
        w.push(exposed);
    }
    match policy {
        DeltaPolicy::StationaryFromAnchor => PoissonParams::stationary(mu, est.delta, p, w),
        DeltaPolicy::FreeScalar => {
            let n = p.len();
            PoissonParams::new(mu, vec![est.delta; n], p, w, None)
        }
        DeltaPolicy::FixedOne => {
            let n = p.len();
            PoissonParams::new(mu, vec![1.0; n], p, w, None)
        }
    }
}

fn entity_nb_params(
    est: &Estimates,
    policy: DeltaPolicy,
    eff: &[EffectivePeriod],
    tail: Option<(&[f64], bool)>,
) -> Result<NbParams> {
    let a = est.a_anchor.ok_or_else(|| Error::domain("NB estimates need a_anchor"))?;
    let mut lambda: Vec<f64> = eff.iter().map(|e| dot(&e.covariates, &est.coefficients).exp()).collect();
    let mut w: Vec<bool> = eff.iter().map(|e| e.use_in_filter).collect();
    if let Some((x, exposed)) = tail {
        lambda.push(dot(x, &est.coefficients).exp());
        w.push(exposed);
    }
    let delta = if policy == DeltaPolicy::FixedOne { 1.0 } else { est.delta };
    let n = lambda.len();
    NbParams::new(a, vec![delta; n], lambda, w)
}

fn entity_loglik(est: &Estimates, model: ModelKind, policy: DeltaPolicy, entity: &PreparedEntity) -> Result<f64> {
    if entity.periods.is_empty() {
        return Ok(0.0);
    }
    if model.is_poisson() {
        let params = entity_poisson_params(est, policy, &entity.periods, None)?;
        Ok(poisson_integrated(&params, &entity.periods)?.loglik)
    } else {
        let params = entity_nb_params(est, policy, &entity.periods, None)?;
        nb_series_loglik(&params, &entity.periods)
    }
}

/// Per-entity log-likelihoods at natural-scale parameters.
pub fn entity_logliks(
    est: &Estimates,
    panel: &PreparedPanel,
    model: ModelKind,
    policy: DeltaPolicy,
) -> Result<Vec<f64>> {
    let policy = model.effective_policy(policy);
    panel.entities.par_iter().with_min_len(32).map(|e| entity_loglik(est, model, policy, e)).collect()
}

pub fn loglik(est: &Estimates, panel: &PreparedPanel, model: ModelKind, policy: DeltaPolicy) -> Result<f64> {
    Ok(compensated_sum(entity_logliks(est, panel, model, policy)?))
}

/// Negative panel log-likelihood at an unconstrained parameter vector;
/// `+inf` wherever the parameters leave the model's domain.
pub fn neg_loglik(theta: &[f64], panel: &PreparedPanel, model: ModelKind, policy: DeltaPolicy) -> Result<f64> {
    let est = constrain(theta, panel.link.covariates.len(), model, policy)?;
    Ok(match loglik(&est, panel, model, policy) {
        Ok(ll) if ll.is_finite() => -ll,
        _ => f64::INFINITY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: NelderMeadConfig,
    pub starts: usize,
    /// Relative jitter of the natural-scale starting values after the first start.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { optimizer: NelderMeadConfig::default(), starts: 5, jitter: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub neg_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityLoglik {
    pub entity_id: String,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub n: usize,
    pub mse: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub fitted: FittedModel,
    pub loglik: f64,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub starts: Vec<StartSummary>,
    pub n_entities: usize,
    pub n_observations: usize,
    pub entity_loglik: Vec<EntityLoglik>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub holdout: Option<Score>,
}

/// Poisson GLM `z ~ Poi(exp(<x, beta>))` fitted by iteratively reweighted
/// least squares on the used periods.
pub fn static_poisson_glm(panel: &PreparedPanel) -> Result<Vec<f64>> {
    let k = panel.link.covariates.len();
    let rows: Vec<(&[f64], f64)> = panel
        .entities
        .iter()
        .flat_map(|e| &e.periods)
        .filter(|p| p.use_in_likelihood)
        .map(|p| (p.covariates.as_slice(), p.effective_count as f64))
        .collect();
    if rows.is_empty() {
        return Err(Error::OptimizationFailed("no usable observations".into()));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut eta: Vec<f64> = rows.iter().map(|(_, z)| (z + 0.1).ln()).collect();
    let mut beta = DVector::zeros(k);
    for _ in 0..50 {
        let mut xtwx = DMatrix::<f64>::identity(k, k) * 1e-10;
        let mut xtwy = DVector::<f64>::zeros(k);
        for ((x, z), e) in rows.iter().zip(&eta) {
            let m = e.exp();
            let y = e + (z - m) / m;
            for i in 0..k {
                xtwy[i] += m * x[i] * y;
                for j in 0..k {
                    xtwx[(i, j)] += m * x[i] * x[j];
                }
            }
        }
        let next = xtwx
            .cholesky()
            .ok_or_else(|| Error::OptimizationFailed("singular design in the static GLM".into()))?
            .solve(&xtwy);
        let change = (&next - &beta).amax();
        beta = next;
        for ((x, _), e) in rows.iter().zip(eta.iter_mut()) {
            *e = dot(x, beta.as_slice()).clamp(-30.0, 30.0);
        }
        if change < 1e-10 {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

fn least_squares(rows: &[(&[f64], f64)], k: usize) -> Result<Vec<f64>> {
    let mut xtx = DMatrix::<f64>::identity(k, k) * 1e-10;
    let mut xty = DVector::<f64>::zeros(k);
    for (x, y) in rows {
        for i in 0..k {
            xty[i] += x[i] * y;
            for j in 0..k {
                xtx[(i, j)] += x[i] * x[j];
            }
        }
    }
    let sol = xtx.cholesky().ok_or_else(|| Error::OptimizationFailed("singular design".into()))?.solve(&xty);
    Ok(sol.iter().copied().collect())
}

/// Natural-scale starting values: static GLM coefficients, `delta = 0.5`,
/// `a = 1`. For the Poisson model `mu` is twice the largest fitted cell mean
/// and `xi` regresses `logit(mean / mu)` on the covariates.
pub fn initial_estimates(panel: &PreparedPanel, model: ModelKind, policy: DeltaPolicy) -> Result<Estimates> {
    let zeta = static_poisson_glm(panel)?;
    let delta = if model.effective_policy(policy) == DeltaPolicy::FixedOne { 1.0 } else { 0.5 };
    if !model.is_poisson() {
        return Ok(Estimates { coefficients: zeta, delta, mu: None, a_anchor: Some(1.0) });
    }
    let k = zeta.len();
    let cells: Vec<(&[f64], f64)> = panel
        .entities
        .iter()
        .flat_map(|e| &e.periods)
        .filter(|p| p.use_in_likelihood)
        .map(|p| (p.covariates.as_slice(), dot(&p.covariates, &zeta).exp()))
        .collect();
    let max_mean = cells.iter().map(|c| c.1).fold(0.0, f64::max).max(1e-6);
    let mu = 2.0 * max_mean;
    let targets: Vec<(&[f64], f64)> = cells.iter().map(|(x, m)| (*x, logit(m / mu))).collect();
    let xi = if k == 0 { Vec::new() } else { least_squares(&targets, k)? };
    Ok(Estimates { coefficients: xi, delta, mu: Some(mu), a_anchor: None })
}

fn jittered(est: &Estimates, scale: f64, rng: &mut impl Rng) -> Estimates {
    let mut j = |x: f64| x * (1.0 + scale * rng.random_range(-1.0..=1.0));
    Estimates {
        coefficients: est.coefficients.iter().map(|&c| j(c)).collect(),
        delta: if est.delta == 1.0 { 1.0 } else { j(est.delta).clamp(0.01, 0.99) },
        mu: est.mu.map(&mut j),
        a_anchor: est.a_anchor.map(&mut j),
    }
}

/// Multistart Nelder-Mead maximum likelihood. The first start is the
/// unjittered initialization; the best optimum over all starts is reported.
pub fn fit(panel: &PreparedPanel, model: ModelKind, policy: DeltaPolicy, config: &FitConfig) -> Result<FitReport> {
    let n_obs = panel.n_observations();
    if n_obs == 0 {
        return Err(Error::OptimizationFailed("no usable observation in the panel".into()));
    }
    let policy = model.effective_policy(policy);
    let n_cov = panel.link.covariates.len();
    let init = initial_estimates(panel, model, policy)?;
    let mut rng = RngStream::root(config.seed).split_str("fit-starts").rng();

    let mut starts = Vec::with_capacity(config.starts.max(1));
    let mut best: Option<crate::optim::Minimum> = None;
    let mut total_evals = 0;
    for s in 0..config.starts.max(1) {
        let est = if s == 0 { init.clone() } else { jittered(&init, config.jitter, &mut rng) };
        let theta0 = unconstrain(&est, model, policy)?;
        let objective = |theta: &[f64]| neg_loglik(theta, panel, model, policy).unwrap_or(f64::INFINITY);
        let m = nelder_mead(objective, &theta0, &config.optimizer);
        total_evals += m.evaluations;
        starts.push(StartSummary { neg_loglik: m.f, iterations: m.iterations, converged: m.converged });
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::OptimizationFailed(format!(
            "no start reached a finite likelihood ({} starts)",
            starts.len()
        )));
    }
    let estimates = constrain(&best.x, n_cov, model, policy)?;
    let per_entity = entity_logliks(&estimates, panel, model, policy)?;
    let total = compensated_sum(per_entity.iter().copied());
    Ok(FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fitted: FittedModel { model, delta_policy: policy, covariates: panel.link.covariates.clone(), estimates },
        loglik: total,
        theta: best.x,
        iterations: best.iterations,
        evaluations: total_evals,
        converged: best.converged,
        starts,
        n_entities: panel.entities.len(),
        n_observations: n_obs,
        entity_loglik: panel
            .entities
            .iter()
            .zip(per_entity)
            .map(|(e, ll)| EntityLoglik { entity_id: e.entity_id.clone(), loglik: ll })
            .collect(),
        holdout: None,
    })
}

/// One-step predictive count law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PredictiveLaw {
    /// No exposure: the count is zero.
    PointZero,
    NegBin {
        kappa: f64,
        pi: f64,
    },
    /// Mixture over the unobserved anchor count: `(weight, Poisson mean)`.
    PoissonMixture {
        components: Vec<(f64, f64)>,
    },
}

impl PredictiveLaw {
    pub fn mean(&self) -> f64 {
        match self {
            PredictiveLaw::PointZero => 0.0,
            PredictiveLaw::NegBin { kappa, pi } => kappa * pi / (1.0 - pi),
            PredictiveLaw::PoissonMixture { components } => components.iter().map(|(w, m)| w * m).sum(),
        }
    }

    pub fn logpmf(&self, z: u64) -> Result<f64> {
        match self {
            PredictiveLaw::PointZero => Ok(if z == 0 { 0.0 } else { f64::NEG_INFINITY }),
            PredictiveLaw::NegBin { kappa, pi } => nb_logpmf(z, *kappa, *pi),
            PredictiveLaw::PoissonMixture { components } => {
                let terms = components
                    .iter()
                    .map(|&(w, m)| Ok(w.ln() + poisson_logpmf(z, m)?))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(log_sum_exp(&terms))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub entity_id: String,
    pub period: u32,
    pub mean: f64,
    /// Latent predictive mean `mu[t|t-1]` (posterior-weighted for Poisson).
    pub latent_mean: f64,
    pub law: PredictiveLaw,
}

/// Predicts the count at `period` for one entity from its history before
/// `period`. The entity needs a record at `period` to supply covariates and
/// exposure.
pub fn predict_entity(fitted: &FittedModel, panel: &Panel, entity_id: &str, period: u32) -> Result<Prediction> {
    let cols = fitted.link().columns(panel)?;
    let series = panel.entity(entity_id)?;
    let target = series
        .record_at(period)
        .ok_or_else(|| Error::Schema(format!("entity {entity_id} has no record at period {period}")))?;
    let exposed = target
        .exposure
        .ok_or_else(|| Error::Schema(format!("entity {entity_id} period {period}: exposure is undefined")))?;
    let x: Vec<f64> = cols.iter().map(|&c| target.covariates[c]).collect();

    let mut hist = prepare_entity(&series.before(period), &cols)?.periods;
    if let Some(last) = hist.last().map(|p| p.period) {
        let carry = hist.last().map(|p| p.covariates.clone()).unwrap_or_default();
        for gap in last + 1..period {
            hist.push(EffectivePeriod {
                period: gap,
                use_in_filter: false,
                use_in_likelihood: false,
                effective_count: 0,
                covariates: carry.clone(),
            });
        }
    }
    let policy = fitted.policy();
    let est = &fitted.estimates;
    let (mean, latent_mean, law) = if fitted.model.is_poisson() {
        let params = entity_poisson_params(est, policy, &hist, Some((&x, exposed)))?;
        let mix = poisson_integrated(&params, &hist)?;
        let t = hist.len() + 1;
        let ps = params.p_star(t);
        let latent: f64 = mix.weights.iter().map(|&(z0, w)| w * mix.mu_pred(t, z0)).sum();
        if ps == 0.0 {
            (0.0, latent, PredictiveLaw::PointZero)
        } else {
            let components: Vec<(f64, f64)> = mix.weights.iter().map(|&(z0, w)| (w, ps * mix.mu_pred(t, z0))).collect();
            let law = PredictiveLaw::PoissonMixture { components };
            (law.mean(), latent, law)
        }
    } else {
        let params = entity_nb_params(est, policy, &hist, Some((&x, exposed)))?;
        let (_, next) = run_nb_series(&params, &hist)?;
        let state = next.ok_or_else(|| Error::domain("missing predictive state"))?;
        let wl = params.w_lambda(hist.len());
        match nb::predictive(state, wl)? {
            None => (0.0, state.mean(), PredictiveLaw::PointZero),
            Some(p) => {
                (nb::predictive_mean(state, wl), state.mean(), PredictiveLaw::NegBin { kappa: p.kappa, pi: p.pi })
            }
        }
    };
    Ok(Prediction { entity_id: entity_id.to_owned(), period, mean, latent_mean, law })
}

/// Predictions for every entity with a record at `period`.
pub fn predict(fitted: &FittedModel, panel: &Panel, period: u32) -> Result<Vec<Prediction>> {
    let ids: Vec<&str> =
        panel.entities.iter().filter(|e| e.record_at(period).is_some()).map(|e| e.entity_id.as_str()).collect();
    ids.par_iter().map(|id| predict_entity(fitted, panel, id, period)).collect()
}

/// Observed counts at `period`, skipping ABSENT records.
pub fn actuals_at(panel: &Panel, period: u32) -> Vec<(String, u64)> {
    panel
        .entities
        .iter()
        .filter_map(|e| {
            let rec = e.record_at(period)?;
            let z = match (rec.exposure, rec.count) {
                (Some(false), _) => 0,
                (Some(true), Some(z)) => z,
                _ => return None,
            };
            Some((e.entity_id.clone(), z))
        })
        .collect()
}

/// Mean squared error and summed predictive log-likelihood. Both slices must
/// list the same entities in the same order.
pub fn score(predictions: &[Prediction], actuals: &[(String, u64)]) -> Result<Score> {
    if predictions.len() != actuals.len() || predictions.iter().zip(actuals).any(|(p, (id, _))| &p.entity_id != id) {
        return Err(Error::Schema("predictions and actuals cover different entities".into()));
    }
    let sq: Vec<f64> = predictions.iter().zip(actuals).map(|(p, (_, z))| (*z as f64 - p.mean).powi(2)).collect();
    let ll = predictions.iter().zip(actuals).map(|(p, (_, z))| p.law.logpmf(*z)).collect::<Result<Vec<f64>>>()?;
    let n = predictions.len();
    Ok(Score { n, mse: if n == 0 { 0.0 } else { compensated_sum(sq) / n as f64 }, loglik: compensated_sum(ll) })
}

/// Restricts predictions to the entities in `actuals`, in their order.
pub fn align(predictions: &[Prediction], actuals: &[(String, u64)]) -> Result<Vec<Prediction>> {
    actuals
        .iter()
        .map(|(id, _)| {
            predictions.iter().find(|p| &p.entity_id == id).cloned().ok_or_else(|| Error::UnknownEntity(id.clone()))
        })
        .collect()
}

/// Predictive count means along `z` computed twice: by filtering and
/// evolving the state, and by the INGARCH recursion with mapped coefficients.
pub fn nb_recursion_means(params: &NbParams, z: &[u64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut state = nb::NbState::anchor(params.a_anchor)?;
    let mut ss = Vec::with_capacity(z.len());
    let mut rec = Vec::with_capacity(z.len());
    let mut m = params.w_lambda(0) * state.mean();
    for (t, &zt) in z.iter().enumerate() {
        ss.push(params.w_lambda(t) * state.mean());
        rec.push(m);
        if t + 1 < params.len() {
            let filtered = nb::filter(state, zt, params.w_lambda(t))?;
            let step = nb::evolve_with(filtered, params.delta[t], params.a_anchor, nb::Schedule::QStationary)?;
            m = if params.w_lambda(t + 1) == 0.0 {
                0.0
            } else {
                match nb::to_ingarch(state, params.delta[t], step.c, params.w_lambda(t), params.w_lambda(t + 1))? {
                    nb::MeanRecursion::Coeffs(c) => c.step(zt as f64, m),
                    nb::MeanRecursion::Direct { mean_next } => mean_next,
                }
            };
            state = step.next;
        }
    }
    Ok((ss, rec))
}

/// Poisson analogue of [`nb_recursion_means`], starting from `mu[t0|t0-1] = mu`
/// at index 0 of `params`.
pub fn poisson_recursion_means(params: &PoissonParams, z: &[u64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut state = poisson::PoissonState::new(params.mu)?;
    let mut ss = Vec::with_capacity(z.len());
    let mut rec = Vec::with_capacity(z.len());
    let mut m = params.p_star(0) * params.mu;
    for (t, &zt) in z.iter().enumerate() {
        ss.push(params.p_star(t) * state.mu_pred);
        rec.push(m);
        if t + 1 < params.p.len() {
            let filtered = poisson::filter(state, zt, params.p_star(t))?;
            let (d, c) = (params.delta[t], params.c_at(t));
            m = if params.p_star(t) > 0.0 && params.p_star(t + 1) > 0.0 {
                poisson::to_ingarch(d, c, params.p_star(t), params.p_star(t + 1))?.step(zt as f64, m)
            } else {
                params.p_star(t + 1) * (d * state.mu_pred + c)
            };
            state = poisson::evolve(filtered, d, c)?;
        }
    }
    Ok((ss, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelObservation;

    fn toy_panel() -> Panel {
        let mut rows = Vec::new();
        for (i, counts) in [[0u64, 1, 0, 2], [3, 0, 0, 1], [0, 0, 0, 0]].iter().enumerate() {
            for (t, &z) in counts.iter().enumerate() {
                rows.push(PanelObservation {
                    entity_id: format!("e{i}"),
                    period: t as u32 + 1,
                    count: Some(z),
                    exposure: Some(true),
                    covariates: vec![1.0, (i % 2) as f64],
                });
            }
        }
        Panel::from_observations(vec!["one".into(), "g".into()], rows).unwrap()
    }

    #[test]
    fn transforms_round_trip() {
        for d in [1e-6, 0.1, 0.5, 0.8, 0.999] {
            assert!((squash_delta(unsquash_delta(d)) - d).abs() < 1e-12);
        }
        let est = Estimates { coefficients: vec![-1.0, 0.5], delta: 0.8, mu: None, a_anchor: Some(1.5) };
        let theta = unconstrain(&est, ModelKind::Nb, DeltaPolicy::FreeScalar).unwrap();
        let back = constrain(&theta, 2, ModelKind::Nb, DeltaPolicy::FreeScalar).unwrap();
        assert!((back.delta - 0.8).abs() < 1e-12 && (back.a_anchor.unwrap() - 1.5).abs() < 1e-12);
        assert!(constrain(&[f64::NAN, 0.0, 0.0, 0.0], 2, ModelKind::Nb, DeltaPolicy::FreeScalar).is_err());
    }

    #[test]
    fn empty_panel_has_zero_objective() {
        let panel = Panel { covariate_names: vec!["g".into()], entities: vec![] };
        let prepared = PreparedPanel::new(&panel, &LinkSpec::all(&panel)).unwrap();
        assert_eq!(neg_loglik(&[0.1, 0.0, 0.0], &prepared, ModelKind::Nb, DeltaPolicy::FreeScalar).unwrap(), 0.0);
    }

    #[test]
    fn single_observation_nb_objective_is_one_pmf_term() {
        let rows = vec![PanelObservation {
            entity_id: "a".into(),
            period: 1,
            count: Some(2),
            exposure: Some(true),
            covariates: vec![0.3],
        }];
        let panel = Panel::from_observations(vec!["x".into()], rows).unwrap();
        let prepared = PreparedPanel::new(&panel, &LinkSpec::all(&panel)).unwrap();
        let est = Estimates { coefficients: vec![0.7], delta: 0.6, mu: None, a_anchor: Some(1.7) };
        let theta = unconstrain(&est, ModelKind::Nb, DeltaPolicy::FreeScalar).unwrap();
        let wl = (0.3f64 * 0.7).exp();
        let want = -nb_logpmf(2, 1.7, wl / (1.7 + wl)).unwrap();
        let got = neg_loglik(&theta, &prepared, ModelKind::Nb, DeltaPolicy::FreeScalar).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn duplicated_entities_double_the_objective() {
        let panel = toy_panel();
        let prepared = PreparedPanel::new(&panel, &LinkSpec::all(&panel)).unwrap();
        for model in [ModelKind::Nb, ModelKind::Poisson] {
            let theta = vec![-0.5, 0.3, 0.2, 0.4];
            let one = neg_loglik(&theta, &prepared, model, DeltaPolicy::FreeScalar).unwrap();
            let two = neg_loglik(&theta, &prepared.replicate(2), model, DeltaPolicy::FreeScalar).unwrap();
            assert!((two - 2.0 * one).abs() < 1e-10 * one.abs());
        }
    }

    #[test]
    fn glm_initialization_matches_cell_means() {
        let panel = toy_panel();
        let prepared = PreparedPanel::new(&panel, &LinkSpec::all(&panel)).unwrap();
        let beta = static_poisson_glm(&prepared).unwrap();
        // g = 0 cell: entities e0, e2 (mean 3/8); g = 1 cell: e1 (mean 1)
        assert!((beta[0] - (3.0f64 / 8.0).ln()).abs() < 1e-8);
        assert!((beta[0] + beta[1]).abs() < 1e-8);
    }

    #[test]
    fn zero_exposure_prediction_is_point_mass() {
        let mut panel = toy_panel();
        panel.entities[0].records.push(PanelObservation {
            entity_id: "e0".into(),
            period: 5,
            count: None,
            exposure: Some(false),
            covariates: vec![1.0, 0.0],
        });
        let fitted = FittedModel {
            model: ModelKind::Nb,
            delta_policy: DeltaPolicy::FreeScalar,
            covariates: vec!["one".into(), "g".into()],
            estimates: Estimates { coefficients: vec![-0.5, 0.2], delta: 0.7, mu: None, a_anchor: Some(1.2) },
        };
        let p = predict_entity(&fitted, &panel, "e0", 5).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.law.logpmf(0).unwrap(), 0.0);
        assert!(matches!(predict_entity(&fitted, &panel, "nobody", 5), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn claim_free_history_reverts_toward_one() {
        let mut panel = toy_panel();
        panel.entities[2].records.push(PanelObservation {
            entity_id: "e2".into(),
            period: 5,
            count: None,
            exposure: Some(true),
            covariates: vec![1.0, 0.0],
        });
        let est = Estimates { coefficients: vec![-0.5, 0.2], delta: 0.7, mu: None, a_anchor: Some(1.2) };
        let fitted = FittedModel {
            model: ModelKind::Nb,
            delta_policy: DeltaPolicy::FreeScalar,
            covariates: vec!["one".into(), "g".into()],
            estimates: est.clone(),
        };
        let p = predict_entity(&fitted, &panel, "e2", 5).unwrap();
        let prepared = PreparedPanel::new(&panel.truncate(4), &fitted.link()).unwrap();
        let eff = &prepared.entities[2].periods;
        let params = entity_nb_params(&est, DeltaPolicy::FreeScalar, eff, None).unwrap();
        let (run, _) = run_nb_series(&params, eff).unwrap();
        let filtered = *run.filtered_means.last().unwrap();
        assert!(filtered < 1.0 && p.latent_mean > filtered && p.latent_mean < 1.0);
    }

    #[test]
    fn score_examples() {
        let preds: Vec<Prediction> = [1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| Prediction {
                entity_id: format!("e{i}"),
                period: 1,
                mean: m,
                latent_mean: m,
                law: PredictiveLaw::NegBin { kappa: 1.0, pi: m / (1.0 + m) },
            })
            .collect();
        let s = score(&preds, &[("e0".into(), 1), ("e1".into(), 2)]).unwrap();
        assert_eq!(s.mse, 0.0);
        assert!(score(&preds, &[("e1".into(), 1), ("e0".into(), 2)]).is_err());
    }
}
