//! Panel container, missingness handling and per-entity filtering runs.
//!
//! A period whose count is ABSENT (recorded as unknown) is handled exactly
//! like a period without exposure: it contributes no likelihood term and the
//! filtering step is skipped. Gaps in an entity's period indices are filled
//! with such periods.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::poisson_logpmf;
use crate::kernels::special::log_sum_exp;
use crate::nb::{self, NbParams, NbState};
use crate::poisson::{self, PoissonParams, PoissonState};

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub entity_id: String,
    pub period: u32,
    /// `None` is an ABSENT (unrecorded) count.
    pub count: Option<u64>,
    /// `None` when the exposure field was left empty.
    pub exposure: Option<bool>,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    AsNoExposure,
}

/// All observations of one entity, in strictly increasing period order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySeries {
    pub entity_id: String,
    pub records: Vec<PanelObservation>,
}

impl EntitySeries {
    pub fn first_period(&self) -> Option<u32> {
        self.records.first().map(|r| r.period)
    }

    pub fn record_at(&self, period: u32) -> Option<&PanelObservation> {
        self.records.binary_search_by_key(&period, |r| r.period).ok().map(|i| &self.records[i])
    }

    /// The records strictly before `period`.
    pub fn before(&self, period: u32) -> EntitySeries {
        EntitySeries {
            entity_id: self.entity_id.clone(),
            records: self.records.iter().filter(|r| r.period < period).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub covariate_names: Vec<String>,
    pub entities: Vec<EntitySeries>,
}

impl Panel {
    /// Groups rows by entity in order of first appearance.
    pub fn from_observations(covariate_names: Vec<String>, rows: Vec<PanelObservation>) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut entities: Vec<EntitySeries> = Vec::new();
        for row in rows {
            if row.covariates.len() != covariate_names.len() {
                return Err(Error::Schema(format!(
                    "entity {} period {}: expected {} covariates, got {}",
                    row.entity_id,
                    row.period,
                    covariate_names.len(),
                    row.covariates.len()
                )));
            }
            if row.period == 0 {
                return Err(Error::Schema(format!("entity {}: periods start at 1", row.entity_id)));
            }
            let slot = *index.entry(row.entity_id.clone()).or_insert_with(|| {
                entities.push(EntitySeries { entity_id: row.entity_id.clone(), records: Vec::new() });
                entities.len() - 1
            });
            let series = &mut entities[slot];
            if let Some(last) = series.records.last() {
                if row.period <= last.period {
                    return Err(Error::Schema(format!(
                        "entity {}: period {} does not follow period {}",
                        row.entity_id, row.period, last.period
                    )));
                }
            }
            series.records.push(row);
        }
        Ok(Self { covariate_names, entities })
    }

    pub fn observations(&self) -> impl Iterator<Item = &PanelObservation> {
        self.entities.iter().flat_map(|e| e.records.iter())
    }

    pub fn entity(&self, id: &str) -> Result<&EntitySeries> {
        self.entities.iter().find(|e| e.entity_id == id).ok_or_else(|| Error::UnknownEntity(id.to_owned()))
    }

    /// Keeps only periods `<= last`; entities left empty are dropped.
    pub fn truncate(&self, last: u32) -> Panel {
        let entities = self
            .entities
            .iter()
            .map(|e| EntitySeries {
                entity_id: e.entity_id.clone(),
                records: e.records.iter().filter(|r| r.period <= last).cloned().collect(),
            })
            .filter(|e| !e.records.is_empty())
            .collect();
        Panel { covariate_names: self.covariate_names.clone(), entities }
    }

    pub fn max_period(&self) -> Option<u32> {
        self.observations().map(|r| r.period).max()
    }
}

/// One period after the missingness policy is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePeriod {
    pub period: u32,
    pub use_in_filter: bool,
    pub use_in_likelihood: bool,
    pub effective_count: u64,
    pub covariates: Vec<f64>,
}

impl EffectivePeriod {
    pub fn observed(&self) -> bool {
        self.use_in_likelihood
    }
}

/// Resolves exposure and ABSENT counts into filter/likelihood flags and fills
/// period gaps with unexposed periods (carrying the previous covariates,
/// which cannot influence an unexposed period).
pub fn apply_missingness(series: &EntitySeries, policy: MissingPolicy) -> Result<Vec<EffectivePeriod>> {
    let MissingPolicy::AsNoExposure = policy;
    let mut out: Vec<EffectivePeriod> = Vec::with_capacity(series.records.len());
    for rec in &series.records {
        let exposure = rec.exposure.ok_or_else(|| {
            Error::Schema(format!("entity {} period {}: exposure is undefined", series.entity_id, rec.period))
        })?;
        if let Some(prev) = out.last() {
            for gap in prev.period + 1..rec.period {
                out.push(EffectivePeriod {
                    period: gap,
                    use_in_filter: false,
                    use_in_likelihood: false,
                    effective_count: 0,
                    covariates: prev_covariates(&out),
                });
            }
        }
        let (used, count) = match (exposure, rec.count) {
            (false, Some(c)) if c > 0 => {
                return Err(Error::ZeroExposureCount { count: c }.at(&series.entity_id, rec.period));
            }
            (true, Some(c)) => (true, c),
            _ => (false, 0),
        };
        out.push(EffectivePeriod {
            period: rec.period,
            use_in_filter: used,
            use_in_likelihood: used,
            effective_count: count,
            covariates: rec.covariates.clone(),
        });
    }
    Ok(out)
}

fn prev_covariates(out: &[EffectivePeriod]) -> Vec<f64> {
    out.last().map(|p| p.covariates.clone()).unwrap_or_default()
}

/// Outcome of filtering one entity's series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRun {
    /// One-step predictive mean of the count at each period.
    pub predictive_means: Vec<f64>,
    /// `E[Θ[t] | Z[<=t]]` at each period.
    pub filtered_means: Vec<f64>,
    /// Log-likelihood term per period (0 where unused).
    pub loglik_terms: Vec<f64>,
    pub loglik: f64,
}

/// Runs a Poisson series conditional on the unobserved anchor count `z0`.
///
/// `params` index 0 is the anchor period and index `t` the `t`-th entry of
/// `eff`; its `w` must mirror the `use_in_filter` flags. Returns the run and
/// the predictive state after the last period when `params` extends past it.
pub fn run_poisson_series(
    params: &PoissonParams,
    eff: &[EffectivePeriod],
    z0: u64,
) -> Result<(SeriesRun, Option<PoissonState>)> {
    if params.p.len() < eff.len() + 1 {
        return Err(Error::domain("parameters cover fewer periods than the series"));
    }
    let anchor = PoissonState::new(params.mu)?;
    let filtered0 = poisson::filter(anchor, z0, params.p_star(0))?;
    let mut state = poisson::evolve(filtered0, params.delta[0], params.c_at(0))?;
    let mut run = SeriesRun {
        predictive_means: Vec::with_capacity(eff.len()),
        filtered_means: Vec::with_capacity(eff.len()),
        loglik_terms: Vec::with_capacity(eff.len()),
        loglik: 0.0,
    };
    for (i, period) in eff.iter().enumerate() {
        let t = i + 1;
        let ps = params.p_star(t);
        let z = period.effective_count;
        let term = if period.use_in_likelihood { poisson::predictive_logpmf(state, ps, z)? } else { 0.0 };
        let filtered = poisson::filter(state, z, ps)?;
        run.predictive_means.push(poisson::predictive_mean(state, ps));
        run.filtered_means.push(filtered);
        run.loglik_terms.push(term);
        if t + 1 < params.p.len() {
            state = poisson::evolve(filtered, params.delta[t], params.c_at(t))?;
        }
    }
    run.loglik = crate::kernels::special::compensated_sum(run.loglik_terms.iter().copied());
    let next = (params.p.len() > eff.len() + 1).then_some(state);
    Ok((run, next))
}

/// Poisson entity likelihood with the anchor count integrated out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixture {
    pub loglik: f64,
    /// `(z0, posterior weight)` over the retained anchor counts.
    pub weights: Vec<(u64, f64)>,
    /// Affine coefficients of `mu[t|t-1] = alpha + gamma z0`, one per period of
    /// `params` after the anchor.
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl PoissonMixture {
    pub fn mu_pred(&self, t: usize, z0: u64) -> f64 {
        self.alpha[t - 1] + self.gamma[t - 1] * z0 as f64
    }
}

/// Exact marginal likelihood of a Poisson series, summing over the anchor
/// count `Z[0] ~ Poi(p*[0] mu)`.
///
/// Every `mu[t|t-1]` is affine in `z0`, so each retained `z0` costs one log per
/// positive count. Anchor counts are enumerated until their log-weight falls
/// 50 below the running maximum (the log-weights are concave in `z0`).
pub fn poisson_integrated(params: &PoissonParams, eff: &[EffectivePeriod]) -> Result<PoissonMixture> {
    if params.p.len() < eff.len() + 1 {
        return Err(Error::domain("parameters cover fewer periods than the series"));
    }
    params.validate()?;
    let horizon = params.p.len() - 1;
    let mut alpha = Vec::with_capacity(horizon);
    let mut gamma = Vec::with_capacity(horizon);
    // mu[1|0](z0) = delta0 (z0 + (1 - p*0) mu) + c0
    let (d0, ps0) = (params.delta[0], params.p_star(0));
    alpha.push(d0 * (1.0 - ps0) * params.mu + params.c_at(0));
    gamma.push(d0);
    for t in 1..horizon {
        let ps = params.p_star(t);
        let (a, g) = (alpha[t - 1], gamma[t - 1]);
        let z = eff.get(t - 1).map_or(0, |p| p.effective_count) as f64;
        let d = params.delta[t];
        let zt = if ps > 0.0 { z } else { 0.0 };
        alpha.push(d * (zt + (1.0 - ps) * a) + params.c_at(t));
        gamma.push(d * (1.0 - ps) * g);
    }

    let mut base = 0.0;
    let mut slope = 0.0;
    let mut positive: Vec<(f64, f64, f64)> = Vec::new();
    for (i, period) in eff.iter().enumerate() {
        let t = i + 1;
        let ps = params.p_star(t);
        if !period.use_in_likelihood {
            continue;
        }
        if ps == 0.0 {
            if period.effective_count > 0 {
                return Err(Error::ZeroExposureCount { count: period.effective_count });
            }
            continue;
        }
        base -= ps * alpha[i];
        slope += ps * gamma[i];
        let z = period.effective_count;
        if z > 0 {
            let zf = z as f64;
            base += zf * ps.ln() - crate::kernels::special::ln_factorial(z);
            positive.push((zf, alpha[i], gamma[i]));
        }
    }

    let prior_mean = ps0 * params.mu;
    let mut logw: Vec<f64> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut z0: u64 = 0;
    loop {
        let mut lw = poisson_logpmf(z0, prior_mean)? - slope * z0 as f64;
        for &(z, a, g) in &positive {
            lw += z * (a + g * z0 as f64).ln();
        }
        if lw.is_nan() {
            return Err(Error::domain("non-finite anchor weight"));
        }
        best = best.max(lw);
        let falling = logw.last().is_some_and(|&prev| lw <= prev);
        logw.push(lw);
        if (falling && lw < best - 50.0) || lw == f64::NEG_INFINITY || logw.len() >= 100_000 {
            break;
        }
        z0 += 1;
    }
    let total = log_sum_exp(&logw);
    let weights =
        logw.iter().enumerate().map(|(k, &lw)| (k as u64, (lw - total).exp())).filter(|&(_, w)| w > 0.0).collect();
    Ok(PoissonMixture { loglik: base + total, weights, alpha, gamma })
}

/// Runs an NB series from the anchor `(a, a)` at its first period. `params`
/// index `t` matches `eff[t]`; its `w` must mirror the `use_in_filter` flags.
/// Returns the predictive state after the last period when `params` extends
/// past it.
pub fn run_nb_series(params: &NbParams, eff: &[EffectivePeriod]) -> Result<(SeriesRun, Option<NbState>)> {
    if params.len() < eff.len() {
        return Err(Error::domain("parameters cover fewer periods than the series"));
    }
    let mut state = NbState::anchor(params.a_anchor)?;
    let mut run = SeriesRun {
        predictive_means: Vec::with_capacity(eff.len()),
        filtered_means: Vec::with_capacity(eff.len()),
        loglik_terms: Vec::with_capacity(eff.len()),
        loglik: 0.0,
    };
    for (t, period) in eff.iter().enumerate() {
        let wl = params.w_lambda(t);
        let z = period.effective_count;
        let term = if period.use_in_likelihood { nb::predictive_logpmf(state, wl, z)? } else { 0.0 };
        let filtered = nb::filter(state, z, wl)?;
        run.predictive_means.push(nb::predictive_mean(state, wl));
        run.filtered_means.push(filtered.mean());
        run.loglik_terms.push(term);
        if t + 1 < params.len() {
            state = nb::evolve(filtered, params.delta[t], params.a_anchor)?;
        }
    }
    run.loglik = crate::kernels::special::compensated_sum(run.loglik_terms.iter().copied());
    let next = (params.len() > eff.len()).then_some(state);
    Ok((run, next))
}

/// NB log-likelihood only, skipping the bookkeeping of [`run_nb_series`].
pub fn nb_series_loglik(params: &NbParams, eff: &[EffectivePeriod]) -> Result<f64> {
    let mut state = NbState::anchor(params.a_anchor)?;
    let mut total = 0.0;
    for (t, period) in eff.iter().enumerate() {
        let wl = params.w_lambda(t);
        let z = period.effective_count;
        if period.use_in_likelihood {
            total += nb::predictive_logpmf(state, wl, z)?;
        }
        if t + 1 < eff.len() {
            state = nb::evolve(nb::filter(state, z, wl)?, params.delta[t], params.a_anchor)?;
        }
    }
    Ok(total)
}

const HEADER: [&str; 4] = ["entity_id", "period", "claims", "exposure"];

fn csv_err(row: u64, message: impl Into<String>) -> Error {
    Error::Csv { row, message: message.into() }
}

/// Reads a panel CSV with header `entity_id,period,claims,exposure,<covariates...>`.
/// Row numbers in errors count the header as row 1.
pub fn read_csv<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_err(1, e.to_string()))?,
        None => return Err(csv_err(1, "missing header")),
    };
    if header.len() < 4 || header.iter().take(4).ne(HEADER) {
        return Err(csv_err(1, format!("header must start with {}", HEADER.join(","))));
    }
    let covariate_names: Vec<String> = header.iter().skip(4).map(str::to_owned).collect();
    let mut rows = Vec::new();
    let mut last: HashMap<String, u32> = HashMap::new();
    for (i, rec) in records.enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(csv_err(row, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let entity_id = rec[0].to_owned();
        if entity_id.is_empty() {
            return Err(csv_err(row, "empty entity_id"));
        }
        let period: u32 = rec[1]
            .parse()
            .ok()
            .filter(|&p| p >= 1)
            .ok_or_else(|| csv_err(row, format!("invalid period {:?}", &rec[1])))?;
        let count = match &rec[2] {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| csv_err(row, format!("invalid claims {s:?}")))?),
        };
        let exposure = match &rec[3] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            s => return Err(csv_err(row, format!("exposure must be 0 or 1, got {s:?}"))),
        };
        if exposure == Some(false) && count.is_some_and(|c| c > 0) {
            return Err(csv_err(row, "positive claims with zero exposure"));
        }
        let covariates = rec
            .iter()
            .skip(4)
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| csv_err(row, "covariates must be finite numbers"))?;
        if let Some(&prev) = last.get(&entity_id) {
            if period <= prev {
                return Err(csv_err(row, format!("period {period} does not follow period {prev} for {entity_id}")));
            }
        }
        last.insert(entity_id.clone(), period);
        rows.push(PanelObservation { entity_id, period, count, exposure, covariates });
    }
    Panel::from_observations(covariate_names, rows)
}

pub fn write_csv<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<&str> = HEADER.to_vec();
    header.extend(panel.covariate_names.iter().map(String::as_str));
    wtr.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for obs in panel.observations() {
        let mut fields = vec![
            obs.entity_id.clone(),
            obs.period.to_string(),
            obs.count.map(|c| c.to_string()).unwrap_or_default(),
            match obs.exposure {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            },
        ];
        fields.extend(obs.covariates.iter().map(|x| x.to_string()));
        wtr.write_record(&fields).map_err(|e| Error::Io(e.into()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(id: &str, period: u32, count: Option<u64>, exposure: Option<bool>) -> PanelObservation {
        PanelObservation { entity_id: id.into(), period, count, exposure, covariates: vec![1.0] }
    }

    fn series(records: Vec<PanelObservation>) -> EntitySeries {
        EntitySeries { entity_id: "e".into(), records }
    }

    #[test]
    fn missingness_flags() {
        let s = series(vec![
            obs("e", 1, Some(3), Some(true)),
            obs("e", 2, None, Some(true)),
            obs("e", 3, Some(0), Some(false)),
            obs("e", 5, Some(1), Some(true)),
        ]);
        let eff = apply_missingness(&s, MissingPolicy::AsNoExposure).unwrap();
        let flags: Vec<_> =
            eff.iter().map(|p| (p.period, p.use_in_filter, p.use_in_likelihood, p.effective_count)).collect();
        assert_eq!(
            flags,
            vec![
                (1, true, true, 3),
                (2, false, false, 0),
                (3, false, false, 0),
                (4, false, false, 0),
                (5, true, true, 1)
            ]
        );
    }

    #[test]
    fn undefined_exposure_is_a_schema_error() {
        let s = series(vec![obs("e", 1, None, None)]);
        assert!(matches!(apply_missingness(&s, MissingPolicy::AsNoExposure), Err(Error::Schema(_))));
        let s = series(vec![obs("e", 1, Some(2), Some(false))]);
        assert!(apply_missingness(&s, MissingPolicy::AsNoExposure).is_err());
    }

    fn nb_params(n: usize, w: Vec<bool>) -> NbParams {
        NbParams::new(1.3, vec![0.7; n], vec![0.9; n], w).unwrap()
    }

    #[test]
    fn single_period_run_is_one_pmf_term() {
        let eff =
            apply_missingness(&series(vec![obs("e", 1, Some(2), Some(true))]), MissingPolicy::AsNoExposure).unwrap();
        let (run, next) = run_nb_series(&nb_params(1, vec![true]), &eff).unwrap();
        let direct = nb::predictive_logpmf(NbState::anchor(1.3).unwrap(), 0.9, 2).unwrap();
        assert_eq!(run.loglik, direct);
        assert!(next.is_none());
    }

    #[test]
    fn absent_period_is_skipped_in_composition() {
        let eff = apply_missingness(
            &series(vec![
                obs("e", 1, Some(1), Some(true)),
                obs("e", 2, None, Some(true)),
                obs("e", 3, Some(2), Some(true)),
            ]),
            MissingPolicy::AsNoExposure,
        )
        .unwrap();
        let params = nb_params(3, vec![true, false, true]);
        let (run, _) = run_nb_series(&params, &eff).unwrap();

        let s1 = NbState::anchor(1.3).unwrap();
        let term1 = nb::predictive_logpmf(s1, 0.9, 1).unwrap();
        let s2 = nb::evolve(nb::filter(s1, 1, 0.9).unwrap(), 0.7, 1.3).unwrap();
        let s3 = nb::evolve(s2, 0.7, 1.3).unwrap();
        let term3 = nb::predictive_logpmf(s3, 0.9, 2).unwrap();
        assert!((run.loglik - (term1 + term3)).abs() < 1e-14);
        assert_eq!(nb_series_loglik(&params, &eff).unwrap(), term1 + term3);
    }

    #[test]
    fn all_absent_series_has_zero_loglik() {
        let eff = apply_missingness(
            &series(vec![obs("e", 1, None, Some(true)), obs("e", 2, None, Some(true))]),
            MissingPolicy::AsNoExposure,
        )
        .unwrap();
        let (run, _) = run_nb_series(&nb_params(2, vec![false, false]), &eff).unwrap();
        assert_eq!(run.loglik, 0.0);
        assert_eq!(run.filtered_means, vec![1.0, 1.0]);
    }

    #[test]
    fn integrated_poisson_matches_brute_force_sum() {
        let eff = apply_missingness(
            &series(vec![
                obs("e", 1, Some(2), Some(true)),
                obs("e", 2, Some(0), Some(true)),
                obs("e", 3, None, Some(true)),
                obs("e", 4, Some(3), Some(true)),
            ]),
            MissingPolicy::AsNoExposure,
        )
        .unwrap();
        let p = vec![0.35, 0.4, 0.3, 0.5, 0.45];
        let w = vec![true, true, true, false, true];
        let params = PoissonParams::stationary(2.2, 0.8, p, w).unwrap();
        let mix = poisson_integrated(&params, &eff).unwrap();

        let terms: Vec<f64> = (0..200u64)
            .map(|z0| poisson_logpmf(z0, 0.35 * 2.2).unwrap() + run_poisson_series(&params, &eff, z0).unwrap().0.loglik)
            .collect();
        assert!((mix.loglik - log_sum_exp(&terms)).abs() < 1e-12);
        let total: f64 = mix.weights.iter().map(|w| w.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for z0 in [0u64, 3, 7] {
            let (run, _) = run_poisson_series(&params, &eff, z0).unwrap();
            for t in 1..=4 {
                let mu = run.predictive_means[t - 1] / params.p_star(t).max(f64::MIN_POSITIVE);
                if params.p_star(t) > 0.0 {
                    assert!((mu - mix.mu_pred(t, z0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let text = "entity_id,period,claims,exposure,x1,x2\n\
                    a,1,0,1,0.1,3\n\
                    a,2,,1,0.30000000000000004,-2.5\n\
                    a,4,0,0,1e-7,0\n\
                    b,1,5,1,1,1\n";
        let panel = read_csv(text.as_bytes()).unwrap();
        assert_eq!(panel.entities.len(), 2);
        assert_eq!(panel.entities[0].records[1].count, None);
        let mut out = Vec::new();
        write_csv(&panel, &mut out).unwrap();
        let emitted = String::from_utf8(out).unwrap();
        let again = read_csv(emitted.as_bytes()).unwrap();
        assert_eq!(again, panel);
        let mut out2 = Vec::new();
        write_csv(&again, &mut out2).unwrap();
        assert_eq!(emitted, String::from_utf8(out2).unwrap());
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let bad = "entity_id,period,claims,exposure\na,1,0,1\na,2,x,1\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { row: 3, .. })));
        let bad = "entity_id,period,claims,exposure\na,1,2,0\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { row: 2, .. })));
        let bad = "entity_id,period,claims,exposure\na,2,0,1\na,1,0,1\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { row: 3, .. })));
        let bad = "id,period,claims,exposure\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { row: 1, .. })));
        let bad = "entity_id,period,claims,exposure\na,1,0\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(Error::Csv { row: 2, .. })));
    }
}
