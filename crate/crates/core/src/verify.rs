//! Monte Carlo checks of the serial covariance laws shared by both lifted
//! models: `Cov(Θ[t], Θ[t+k]) = (prod of delta) Var(Θ[t])`, and the same scaled
//! by the observation means for the counts.
//!
//! Standard errors come from 50 batch means; a check passes when the
//! estimate lies within four standard errors of the closed form.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::RngStream;
use crate::nb::{self, NbParams};
use crate::poisson::{self, PoissonParams};

pub const BATCHES: usize = 50;
pub const TOLERANCE_SE: f64 = 4.0;

/// A model whose lifted form can be simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LiftedModel {
    /// Periods `0..=T`.
    Poisson(PoissonParams),
    /// Periods `1..=T`.
    Nb(NbParams),
}

/// Closed-form moments indexed by period.
#[derive(Debug, Clone, PartialEq)]
pub struct Theory {
    pub first_period: usize,
    pub mean_theta: Vec<f64>,
    pub var_theta: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub var_z: Vec<f64>,
    /// Mean of `Z[t]` given `Θ[t]` per unit of `Θ[t]`.
    pub obs_scale: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Theory {
    fn idx(&self, t: usize) -> Result<usize> {
        t.checked_sub(self.first_period)
            .filter(|&i| i < self.mean_theta.len())
            .ok_or_else(|| Error::domain(format!("period {t} outside the model horizon")))
    }

    pub fn latent_cov(&self, t: usize, k: usize) -> Result<f64> {
        let i = self.idx(t)?;
        self.idx(t + k)?;
        Ok(self.delta[i..i + k].iter().product::<f64>() * self.var_theta[i])
    }

    pub fn obs_cov(&self, t: usize, k: usize) -> Result<f64> {
        let (i, j) = (self.idx(t)?, self.idx(t + k)?);
        if k == 0 {
            return Ok(self.var_z[i]);
        }
        Ok(self.obs_scale[i] * self.obs_scale[j] * self.latent_cov(t, k)?)
    }
}

impl LiftedModel {
    pub fn first_period(&self) -> usize {
        match self {
            LiftedModel::Poisson(_) => 0,
            LiftedModel::Nb(_) => 1,
        }
    }

    pub fn n_periods(&self) -> usize {
        match self {
            LiftedModel::Poisson(p) => p.p.len(),
            LiftedModel::Nb(p) => p.len(),
        }
    }

    pub fn theory(&self) -> Result<Theory> {
        match self {
            LiftedModel::Poisson(p) => {
                let m = poisson::moments(p, p.horizon())?;
                Ok(Theory {
                    first_period: 0,
                    mean_theta: m.iter().map(|r| r.mean_theta).collect(),
                    var_theta: m.iter().map(|r| r.var_theta).collect(),
                    mean_z: m.iter().map(|r| r.mean_z).collect(),
                    var_z: m.iter().map(|r| r.var_z).collect(),
                    obs_scale: (0..p.p.len()).map(|t| p.p_star(t)).collect(),
                    delta: p.delta.clone(),
                })
            }
            LiftedModel::Nb(p) => {
                let m = nb::moments(p, p.len())?;
                Ok(Theory {
                    first_period: 1,
                    mean_theta: m.iter().map(|r| r.mean_theta).collect(),
                    var_theta: m.iter().map(|r| r.var_theta).collect(),
                    mean_z: m.iter().map(|r| r.mean_z).collect(),
                    var_z: m.iter().map(|r| r.var_z).collect(),
                    obs_scale: (0..p.len()).map(|t| p.w_lambda(t)).collect(),
                    delta: p.delta.clone(),
                })
            }
        }
    }

    fn sample(&self, stream: RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = stream.rng();
        match self {
            LiftedModel::Poisson(p) => {
                let path = poisson::simulate_lifted(p, &mut rng)?;
                Ok((path.theta.iter().map(|&x| x as f64).collect(), path.z.iter().map(|&x| x as f64).collect()))
            }
            LiftedModel::Nb(p) => {
                let path = nb::simulate_lifted(p, &mut rng)?;
                Ok((path.theta, path.z.iter().map(|&x| x as f64).collect()))
            }
        }
    }
}

/// `n` lifted paths stored row-major (`n` rows of `periods` values).
#[derive(Debug, Clone)]
pub struct Paths {
    pub n: usize,
    pub periods: usize,
    pub first_period: usize,
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
}

/// Replicate `i` draws from `stream.split(i)`, so results do not depend on
/// the thread count.
pub fn simulate_paths(model: &LiftedModel, n: usize, stream: RngStream) -> Result<Paths> {
    let periods = model.n_periods();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| model.sample(stream.split(i as u64)))
        .collect::<Result<_>>()?;
    let mut theta = Vec::with_capacity(n * periods);
    let mut z = Vec::with_capacity(n * periods);
    for (th, zz) in draws {
        theta.extend(th);
        z.extend(zz);
    }
    Ok(Paths { n, periods, first_period: model.first_period(), theta, z })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Theta,
    Z,
}

impl Paths {
    fn column(&self, series: Series, t: usize) -> Result<impl Iterator<Item = f64> + '_> {
        let j = t
            .checked_sub(self.first_period)
            .filter(|&j| j < self.periods)
            .ok_or_else(|| Error::domain(format!("period {t} outside the simulated horizon")))?;
        let data = match series {
            Series::Theta => &self.theta,
            Series::Z => &self.z,
        };
        Ok(data.iter().skip(j).step_by(self.periods).copied())
    }

    /// Mean and batch-means standard error of a per-replicate statistic.
    pub fn batch_estimate<F>(&self, stat: F) -> Result<(f64, f64)>
    where
        F: Fn(&[f64], &[f64]) -> f64,
    {
        batch_mean_se(self.n, |range| {
            let rows = range.start * self.periods..range.end * self.periods;
            stat(&self.theta[rows.clone()], &self.z[rows])
        })
    }

    /// Batch-means estimate of `Cov(X[t], Y[t+k])`; `k = 0` with equal series is a variance.
    pub fn cov(&self, a: Series, t: usize, b: Series, s: usize) -> Result<(f64, f64)> {
        let xs: Vec<f64> = self.column(a, t)?.collect();
        let ys: Vec<f64> = self.column(b, s)?.collect();
        batch_mean_se(self.n, |r| sample_cov(&xs[r.clone()], &ys[r]))
    }

    pub fn mean(&self, a: Series, t: usize) -> Result<(f64, f64)> {
        let xs: Vec<f64> = self.column(a, t)?.collect();
        batch_mean_se(self.n, |r| mean(&xs[r]))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let s: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    s / (xs.len() - 1) as f64
}

/// Mean and standard error of `stat` evaluated on 50 equal consecutive
/// batches of `0..n` (a remainder shorter than one batch is dropped).
pub fn batch_mean_se<F>(n: usize, stat: F) -> Result<(f64, f64)>
where
    F: Fn(std::ops::Range<usize>) -> f64,
{
    if n < 2 * BATCHES {
        return Err(Error::domain(format!("need at least {} replications", 2 * BATCHES)));
    }
    let size = n / BATCHES;
    let est: Vec<f64> = (0..BATCHES).map(|b| stat(b * size..(b + 1) * size)).collect();
    let m = mean(&est);
    let var = est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((m, (var / BATCHES as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub t: usize,
    pub lag: usize,
    pub empirical_cov: f64,
    pub theoretical_cov: f64,
    pub mc_stderr: f64,
    pub pass: bool,
}

impl CovReport {
    fn new(t: usize, lag: usize, (empirical_cov, mc_stderr): (f64, f64), theoretical_cov: f64) -> Self {
        let pass = within(empirical_cov, theoretical_cov, mc_stderr);
        Self { t, lag, empirical_cov, theoretical_cov, mc_stderr, pass }
    }
}

fn within(est: f64, truth: f64, se: f64) -> bool {
    (est - truth).abs() <= TOLERANCE_SE * se
}

/// Latent serial covariance from `paths` against the closed form.
pub fn latent_cov_report(paths: &Paths, theory: &Theory, t: usize, k: usize) -> Result<CovReport> {
    Ok(CovReport::new(t, k, paths.cov(Series::Theta, t, Series::Theta, t + k)?, theory.latent_cov(t, k)?))
}

pub fn obs_cov_report(paths: &Paths, theory: &Theory, t: usize, k: usize) -> Result<CovReport> {
    Ok(CovReport::new(t, k, paths.cov(Series::Z, t, Series::Z, t + k)?, theory.obs_cov(t, k)?))
}

pub fn verify_latent_cov(model: &LiftedModel, t: usize, k: usize, n: usize, stream: RngStream) -> Result<CovReport> {
    let paths = simulate_paths(model, n, stream)?;
    latent_cov_report(&paths, &model.theory()?, t, k)
}

pub fn verify_obs_cov(model: &LiftedModel, t: usize, k: usize, n: usize, stream: RngStream) -> Result<CovReport> {
    let paths = simulate_paths(model, n, stream)?;
    obs_cov_report(&paths, &model.theory()?, t, k)
}

/// One moment compared against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub quantity: String,
    pub t: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lag: Option<usize>,
    pub empirical: f64,
    pub theoretical: f64,
    pub mc_stderr: f64,
    pub pass: bool,
}

impl MomentCheck {
    fn new(quantity: &str, t: usize, lag: Option<usize>, (empirical, mc_stderr): (f64, f64), theoretical: f64) -> Self {
        Self {
            quantity: quantity.into(),
            t,
            lag,
            empirical,
            theoretical,
            mc_stderr,
            pass: within(empirical, theoretical, mc_stderr),
        }
    }
}

/// Latent and observed means, variances and lagged covariances at every period.
pub fn moment_checks(paths: &Paths, theory: &Theory, lags: &[usize]) -> Result<Vec<MomentCheck>> {
    let mut out = Vec::new();
    let first = theory.first_period;
    let last = first + theory.mean_theta.len() - 1;
    for t in first..=last {
        let i = t - first;
        out.push(MomentCheck::new("mean_theta", t, None, paths.mean(Series::Theta, t)?, theory.mean_theta[i]));
        out.push(MomentCheck::new(
            "var_theta",
            t,
            None,
            paths.cov(Series::Theta, t, Series::Theta, t)?,
            theory.var_theta[i],
        ));
        out.push(MomentCheck::new("mean_z", t, None, paths.mean(Series::Z, t)?, theory.mean_z[i]));
        out.push(MomentCheck::new("var_z", t, None, paths.cov(Series::Z, t, Series::Z, t)?, theory.var_z[i]));
        for &k in lags.iter().filter(|&&k| k >= 1 && t + k <= last) {
            out.push(MomentCheck::new(
                "cov_theta",
                t,
                Some(k),
                paths.cov(Series::Theta, t, Series::Theta, t + k)?,
                theory.latent_cov(t, k)?,
            ));
            out.push(MomentCheck::new(
                "cov_z",
                t,
                Some(k),
                paths.cov(Series::Z, t, Series::Z, t + k)?,
                theory.obs_cov(t, k)?,
            ));
        }
    }
    Ok(out)
}

/// Convex-order scan of one evolution step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    /// Period whose filtered state is evolved.
    pub t: usize,
    pub delta: f64,
    pub grid_min: f64,
    pub grid_argmin: f64,
    /// First `s` with a gap below the witness threshold, and the gap there.
    pub witness: Option<(f64, f64)>,
    pub pass: bool,
}

/// Floor for the scanned gap minimum when no violation is expected.
pub const GAP_TOLERANCE: f64 = -1e-10;

/// Scans the log-mgf gap of every evolution step along one marginal path
/// drawn from `stream`. Poisson steps with `delta > 1` are scanned too,
/// since the marginal model exists there even though no lift does.
pub fn gap_checks(model: &LiftedModel, stream: RngStream) -> Result<Vec<GapCheck>> {
    let mut rng = stream.rng();
    let mut out = Vec::new();
    let mut push = |t: usize, delta: f64, grid_min: f64, grid_argmin: f64, witness: Option<(f64, f64)>| {
        let pass = witness.is_none() && grid_min >= GAP_TOLERANCE;
        out.push(GapCheck { t, delta, grid_min, grid_argmin, witness, pass });
    };
    match model {
        LiftedModel::Poisson(p) => {
            let z = poisson::simulate_marginal(p, &mut rng)?;
            let mut state = poisson::PoissonState::new(p.mu)?;
            for (t, &zt) in z.iter().enumerate().take(p.horizon()) {
                let ctx = poisson::PoissonGapContext {
                    delta: p.delta[t],
                    c: p.c_at(t),
                    p_star: p.p_star(t),
                    mu_pred: state.mu_pred,
                    z: zt,
                };
                let scan = poisson::scan_mgf_gap(&ctx);
                push(t, ctx.delta, scan.grid_min, scan.grid_argmin, scan.witness);
                state = poisson::evolve(poisson::filter(state, zt, ctx.p_star)?, ctx.delta, ctx.c)?;
            }
        }
        LiftedModel::Nb(p) => {
            let z = nb::simulate_marginal(p, &mut rng)?;
            for (i, step) in nb::transitions(p, &z)?.iter().enumerate() {
                let scan = nb::scan_mgf_gap(&nb::NbGapContext::from_transition(step));
                push(i + 1, step.delta, scan.grid_min, scan.grid_argmin, scan.witness);
            }
        }
    }
    Ok(out)
}

/// Extremes of the stationary NB recursion over random parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionSweep {
    pub sweeps: usize,
    pub periods: usize,
    pub max_q: f64,
    /// Smallest `b - a[1|0]` seen in any filtered or predictive state.
    pub min_rate_margin: f64,
    pub pass: bool,
}

/// Draws `sweeps` random NB parameterizations of length `periods`, simulates
/// a marginal path for each, and tracks `q` and the rate margin.
pub fn recursion_sweep(sweeps: usize, periods: usize, stream: RngStream) -> Result<RecursionSweep> {
    if periods == 0 {
        return Err(Error::domain("sweeps need at least one period"));
    }
    let mut max_q: f64 = 0.0;
    let mut min_rate_margin = f64::INFINITY;
    for i in 0..sweeps {
        let mut rng = stream.split(i as u64).rng();
        let a = 0.1 + 9.9 * rng.random::<f64>();
        let params = NbParams::new(
            a,
            (0..periods).map(|_| rng.random::<f64>()).collect(),
            (0..periods).map(|_| 0.01 + 9.99 * rng.random::<f64>()).collect(),
            (0..periods).map(|_| rng.random::<f64>() < 0.8).collect(),
        )?;
        let z = nb::simulate_marginal(&params, &mut rng)?;
        for step in nb::transitions(&params, &z)? {
            max_q = max_q.max(step.q.unwrap_or(0.0));
            min_rate_margin = min_rate_margin.min(step.filtered.b - a).min(step.next.b - a);
        }
    }
    let pass = max_q <= 1.0 + 1e-12 && min_rate_margin >= -1e-12;
    Ok(RecursionSweep { sweeps, periods, max_q, min_rate_margin, pass })
}

/// Largest absolute round-trip error of both coefficient maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BijectionCheck {
    pub draws: usize,
    pub max_abs_error: f64,
    pub pass: bool,
}

/// Maps random valid state-space parameters to INGARCH coefficients and
/// back, for both models.
pub fn bijection_check(draws: usize, stream: RngStream) -> Result<BijectionCheck> {
    let mut worst: f64 = 0.0;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs());
    for i in 0..draws {
        let mut rng = stream.split(i as u64).rng();
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let (p0, p1, p2) = (u(0.02, 0.98), u(0.02, 0.98), u(0.02, 0.98));
        let (d0, d1, c0, c1) = (u(0.01, 2.0), u(0.01, 2.0), u(0.0, 5.0), u(0.0, 5.0));
        let k0 = poisson::to_ingarch(d0, c0, p0, p1)?;
        let k1 = poisson::to_ingarch(d1, c1, p1, p2)?;
        let m = poisson::from_ingarch(&k0, Some(&k1))?;
        track(m.p, p0);
        track(m.delta, d0);
        track(m.c, c0);

        let state = nb::NbState::new(u(0.1, 10.0), u(0.5, 20.0))?;
        let (d, c, wl, wl_next) = (u(0.01, 1.0), u(0.0, 2.0), u(0.1, 5.0), u(0.1, 5.0));
        let nb::MeanRecursion::Coeffs(k) = nb::to_ingarch(state, d, c, wl, wl_next)? else {
            return Err(Error::domain("exposed periods must map to coefficients"));
        };
        let m = nb::from_ingarch_exposed(&k, wl, wl_next)?;
        track(m.b_pred, state.b);
        track(m.delta, d);
        track(m.c, c);
    }
    Ok(BijectionCheck { draws, max_abs_error: worst, pass: worst <= 1e-12 })
}
