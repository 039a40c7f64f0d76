//! NB-INGARCH(1,1) as a Poisson-observation / Gamma-evolution marginalized
//! linear state-space model.
//!
//! `Θ[t] | Z[<t] ~ Gamma(a[t|t-1], b[t|t-1])` (rate form) and
//! `Z[t] | Θ[t] ~ Poi(w[t] lambda[t] Θ[t])`. Conjugacy gives the filter
//! `(a + Z, b + w lambda)`; the one-step predictive count law is negative
//! binomial with size `a[t+1|t]` and probability `w lambda / (b[t+1|t] + w lambda)`.
//!
//! The panel form anchors at `t = 1` with `a[1|0] = b[1|0]`, so the latent mean
//! is 1 and all scale sits in `lambda`. Index 0 of the per-period vectors in
//! [`NbParams`] refers to `t = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coeffs::IngarchCoeffs;
use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{nb_logpmf, sample_beta, sample_gamma, sample_poisson};
use crate::poisson::{log_grid, WITNESS_THRESHOLD};

/// Shape/rate pair of a Gamma law on the latent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbState {
    pub a: f64,
    pub b: f64,
}

impl NbState {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0 {
            Ok(Self { a, b })
        } else {
            Err(Error::Degenerate(format!("gamma state needs a, b > 0, got ({a}, {b})")))
        }
    }

    pub fn anchor(a_anchor: f64) -> Result<Self> {
        Self::new(a_anchor, a_anchor)
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }
}

fn check_exposure(w_lambda: f64) -> Result<()> {
    if w_lambda.is_finite() && w_lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("exposure w*lambda must be finite and >= 0, got {w_lambda}")))
    }
}

pub fn filter(state: NbState, z: u64, w_lambda: f64) -> Result<NbState> {
    check_exposure(w_lambda)?;
    if w_lambda == 0.0 {
        if z > 0 {
            return Err(Error::ZeroExposureCount { count: z });
        }
        return Ok(state);
    }
    Ok(NbState { a: state.a + z as f64, b: state.b + w_lambda })
}

/// Real-valued variant of [`filter`] used for mean imputation.
pub fn filter_mean(state: NbState, z: f64, w_lambda: f64) -> Result<NbState> {
    check_exposure(w_lambda)?;
    ensure_finite("z", z)?;
    if w_lambda == 0.0 {
        return Ok(state);
    }
    Ok(NbState { a: state.a + z, b: state.b + w_lambda })
}

/// How the next predictive pair is built from the filtered one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Variance-stationary recursion with `c = 1 - delta`.
    QStationary,
    /// `b[t+1|t] = b` for all `t`.
    FixedRate { b: f64, c: f64 },
    /// `a[t+1|t] = a` for all `t`.
    FixedShape { a: f64, c: f64 },
}

/// One evolution step and the quantities the lift and gap need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbTransition {
    pub filtered: NbState,
    pub next: NbState,
    pub delta: f64,
    pub c: f64,
    /// `delta * b[t+1|t] / b[t]`; equals `delta * q` under [`Schedule::QStationary`].
    pub ratio: f64,
    /// The stationarity factor `q`, for the q-recursion only.
    pub q: Option<f64>,
}

/// `q = 1 / (delta^2 + (1 - delta^2) b[t] / a[1|0])` for the filtered rate `b[t]`.
pub fn q_factor(delta: f64, b_filtered: f64, a_anchor: f64) -> f64 {
    let d2 = delta * delta;
    1.0 / (d2 + (1.0 - d2) * b_filtered / a_anchor)
}

/// Evolution under the variance-stationary recursion.
pub fn evolve(filtered: NbState, delta: f64, a_anchor: f64) -> Result<NbState> {
    Ok(evolve_with(filtered, delta, a_anchor, Schedule::QStationary)?.next)
}

pub fn evolve_with(filtered: NbState, delta: f64, a_anchor: f64, schedule: Schedule) -> Result<NbTransition> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::domain(format!("delta must be finite and >= 0, got {delta}")));
    }
    if !(a_anchor.is_finite() && a_anchor > 0.0) {
        return Err(Error::domain(format!("anchor shape must be > 0, got {a_anchor}")));
    }
    let m = filtered.mean();
    let (next, c, q) = match schedule {
        Schedule::QStationary => {
            if delta > 1.0 {
                return Err(Error::domain(format!("the stationary recursion needs delta <= 1, got {delta}")));
            }
            let q = q_factor(delta, filtered.b, a_anchor);
            let b = q * filtered.b;
            let a = delta * q * filtered.a + (1.0 - delta) * b;
            (NbState::new(a, b)?, 1.0 - delta, Some(q))
        }
        Schedule::FixedRate { b, c } => {
            let next = NbState::new(b * (delta * m + c), b)?;
            (next, c, None)
        }
        Schedule::FixedShape { a, c } => {
            let next = NbState::new(a, a / (delta * m + c))?;
            (next, c, None)
        }
    };
    Ok(NbTransition { filtered, next, delta, c, ratio: delta * next.b / filtered.b, q })
}

/// Negative-binomial one-step predictive law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbPredictive {
    pub kappa: f64,
    pub pi: f64,
}

impl NbPredictive {
    pub fn mean(&self) -> f64 {
        self.kappa * self.pi / (1.0 - self.pi)
    }
}

/// `None` under zero exposure, where the count is a point mass at zero.
pub fn predictive(state: NbState, w_lambda: f64) -> Result<Option<NbPredictive>> {
    check_exposure(w_lambda)?;
    if w_lambda == 0.0 {
        return Ok(None);
    }
    Ok(Some(NbPredictive { kappa: state.a, pi: w_lambda / (state.b + w_lambda) }))
}

/// Predictive mean `w lambda a / b`.
pub fn predictive_mean(state: NbState, w_lambda: f64) -> f64 {
    w_lambda * state.mean()
}

pub fn predictive_logpmf(state: NbState, w_lambda: f64, z: u64) -> Result<f64> {
    match predictive(state, w_lambda)? {
        None if z == 0 => Ok(0.0),
        None => Err(Error::ZeroExposureCount { count: z }),
        Some(p) if z == 0 => Ok(-p.kappa * (w_lambda / state.b).ln_1p()),
        Some(p) => nb_logpmf(z, p.kappa, p.pi),
    }
}

/// Mean recursion of one period in INGARCH form, or the direct mean when the
/// current period has no exposure and the coefficient map is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum MeanRecursion {
    Coeffs(IngarchCoeffs),
    Direct { mean_next: f64 },
}

/// Coefficients with `beta0 = wl' c`, `beta1 = wl' delta / (b + wl)`,
/// `beta2 = beta1 b / wl`, where `b = b[t|t-1]`, `wl = w[t] lambda[t]` and `wl'`
/// the next period's exposure.
pub fn to_ingarch(state: NbState, delta: f64, c: f64, w_lambda_t: f64, w_lambda_next: f64) -> Result<MeanRecursion> {
    check_exposure(w_lambda_t)?;
    check_exposure(w_lambda_next)?;
    if !(delta.is_finite() && delta > 0.0) || !(c.is_finite() && c >= 0.0) {
        return Err(Error::domain(format!("need delta > 0 and c >= 0, got delta={delta}, c={c}")));
    }
    if w_lambda_t == 0.0 {
        return Ok(MeanRecursion::Direct { mean_next: w_lambda_next * (c + delta * state.mean()) });
    }
    if w_lambda_next == 0.0 {
        return Err(Error::MapUndefined("next period has no exposure".into()));
    }
    let beta1 = w_lambda_next * delta / (state.b + w_lambda_t);
    Ok(MeanRecursion::Coeffs(IngarchCoeffs { beta0: w_lambda_next * c, beta1, beta2: beta1 * state.b / w_lambda_t }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbMlssm {
    pub b_pred: f64,
    pub delta: f64,
    pub c: f64,
    /// `delta > 1`: a valid M-LSSM but with no linear lift.
    pub outside_lift_region: bool,
}

/// Inverse map with unit exposure: `b = beta2/beta1`, `delta = beta1 + beta2`,
/// `c = beta0`.
pub fn from_ingarch(coeffs: &IngarchCoeffs) -> Result<NbMlssm> {
    from_ingarch_exposed(coeffs, 1.0, 1.0)
}

pub fn from_ingarch_exposed(coeffs: &IngarchCoeffs, w_lambda_t: f64, w_lambda_next: f64) -> Result<NbMlssm> {
    coeffs.validate()?;
    if !(w_lambda_t > 0.0 && w_lambda_next > 0.0) {
        return Err(Error::MapUndefined("inversion needs positive exposure in both periods".into()));
    }
    let delta = (coeffs.beta1 + coeffs.beta2) * w_lambda_t / w_lambda_next;
    Ok(NbMlssm {
        b_pred: w_lambda_t * coeffs.beta2 / coeffs.beta1,
        delta,
        c: coeffs.beta0 / w_lambda_next,
        outside_lift_region: delta > 1.0,
    })
}

/// Certificate that a path stays inside the convex-order region
/// `delta b[t+1|t] / b[t] <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCertificate {
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
    pub holds: bool,
}

/// Runs the schedule along the observed counts and records the ratio of every step.
pub fn parameterization_check(
    schedule: Schedule,
    start: NbState,
    delta: &[f64],
    w_lambda: &[f64],
    z: &[u64],
) -> Result<OrderCertificate> {
    if delta.len() != z.len() || w_lambda.len() != z.len() {
        return Err(Error::domain("delta, w_lambda and z must have equal lengths"));
    }
    let mut state = start;
    let mut ratios = Vec::with_capacity(z.len());
    for t in 0..z.len() {
        let filtered = filter(state, z[t], w_lambda[t])?;
        let step = evolve_with(filtered, delta[t], start.a, schedule)?;
        ratios.push(step.ratio);
        state = step.next;
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(OrderCertificate { max_ratio, holds: max_ratio <= 1.0 + 1e-12, ratios })
}

/// Panel-form parameters for one series, indexed from `t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    pub a_anchor: f64,
    pub delta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub w: Vec<bool>,
}

impl NbParams {
    pub fn new(a_anchor: f64, delta: Vec<f64>, lambda: Vec<f64>, w: Vec<bool>) -> Result<Self> {
        let params = Self { a_anchor, delta, lambda, w };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_anchor.is_finite() && self.a_anchor > 0.0) {
            return Err(Error::domain(format!("a_anchor must be > 0, got {}", self.a_anchor)));
        }
        let n = self.lambda.len();
        if n == 0 || self.delta.len() != n || self.w.len() != n {
            return Err(Error::domain("delta, lambda and w must share a non-zero length"));
        }
        for t in 0..n {
            let (d, l) = (self.delta[t], self.lambda[t]);
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::domain(format!("delta[{t}] must lie in [0, 1], got {d}")));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::domain(format!("lambda[{t}] must be > 0, got {l}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn w_lambda(&self, t: usize) -> f64 {
        if self.w[t] {
            self.lambda[t]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbMoments {
    pub t: usize,
    pub mean_theta: f64,
    pub var_theta: f64,
    pub mean_z: f64,
    pub var_z: f64,
    pub autocov_z: Vec<f64>,
}

/// Closed-form moments for the periods `0..n` (that is `t = 1..=n`).
pub fn moments(params: &NbParams, n: usize) -> Result<Vec<NbMoments>> {
    params.validate()?;
    if n > params.len() {
        return Err(Error::domain(format!("horizon {n} exceeds the parameterized periods ({})", params.len())));
    }
    let var = 1.0 / params.a_anchor;
    let out = (0..n)
        .map(|t| {
            let wl = params.w_lambda(t);
            let mut prod = 1.0;
            let autocov = (t + 1..n)
                .map(|s| {
                    prod *= params.delta[s - 1];
                    wl * params.w_lambda(s) * prod * var
                })
                .collect();
            NbMoments {
                t: t + 1,
                mean_theta: 1.0,
                var_theta: var,
                mean_z: wl,
                var_z: wl + wl * wl * var,
                autocov_z: autocov,
            }
        })
        .collect();
    Ok(out)
}

pub fn simulate_marginal<R: Rng + ?Sized>(params: &NbParams, rng: &mut R) -> Result<Vec<u64>> {
    params.validate()?;
    let mut state = NbState::anchor(params.a_anchor)?;
    let mut z = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let theta = sample_gamma(state.a, state.b, rng)?;
        let wl = params.w_lambda(t);
        let zt = sample_poisson(wl * theta, rng)?;
        z.push(zt);
        if t + 1 < params.len() {
            state = evolve(filter(state, zt, wl)?, params.delta[t], params.a_anchor)?;
        }
    }
    Ok(z)
}

/// The evolution steps taken along an observed count path.
pub fn transitions(params: &NbParams, z: &[u64]) -> Result<Vec<NbTransition>> {
    params.validate()?;
    if z.len() > params.len() {
        return Err(Error::domain("count path longer than the parameterized periods"));
    }
    let mut state = NbState::anchor(params.a_anchor)?;
    let mut out = Vec::with_capacity(z.len());
    for (t, &zt) in z.iter().enumerate().take(params.len() - 1) {
        let step = evolve_with(
            filter(state, zt, params.w_lambda(t))?,
            params.delta[t],
            params.a_anchor,
            Schedule::QStationary,
        )?;
        state = step.next;
        out.push(step);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbPath {
    pub theta: Vec<f64>,
    pub z: Vec<u64>,
}

/// Beta-thinning coupling: `X' = delta Θ + V`, `V ~ Gamma(c b/delta, b/delta)`,
/// `Q ~ Beta(a', a + c b/delta - a')`, `Θ' = (b/delta) Q X' / b'`, all at the
/// filtered `(a, b)` and next predictive `(a', b')`. With `delta = 0` the
/// next state is drawn independently.
pub fn lift_step<R: Rng + ?Sized>(theta: f64, step: &NbTransition, rng: &mut R) -> Result<f64> {
    let NbTransition { filtered, next, delta, c, ratio, .. } = *step;
    if ratio > 1.0 + 1e-12 {
        return Err(Error::LiftRefused(format!(
            "delta b'/b = {ratio} > 1: a linear lift exists iff the ratio lies in [0, 1]"
        )));
    }
    if delta == 0.0 {
        return sample_gamma(next.a, next.b, rng);
    }
    let scale = filtered.b / delta;
    let v_shape = c * scale;
    let v = sample_gamma(v_shape, scale, rng)?;
    let x = delta * theta + v;
    let rest = filtered.a + v_shape - next.a;
    let rest = if rest < 0.0 && rest > -1e-9 * next.a { 0.0 } else { rest };
    let q = sample_beta(next.a, rest, rng)?;
    Ok(q * x * (filtered.b / (delta * next.b)))
}

/// Joint latent/observed path from the lift under the stationary recursion.
pub fn simulate_lifted<R: Rng + ?Sized>(params: &NbParams, rng: &mut R) -> Result<NbPath> {
    params.validate()?;
    let mut state = NbState::anchor(params.a_anchor)?;
    let mut theta = Vec::with_capacity(params.len());
    let mut z = Vec::with_capacity(params.len());
    let mut th = sample_gamma(state.a, state.b, rng)?;
    for t in 0..params.len() {
        let wl = params.w_lambda(t);
        let zt = sample_poisson(wl * th, rng)?;
        theta.push(th);
        z.push(zt);
        if t + 1 < params.len() {
            let step = evolve_with(filter(state, zt, wl)?, params.delta[t], params.a_anchor, Schedule::QStationary)?;
            th = lift_step(th, &step, rng)?;
            state = step.next;
        }
    }
    Ok(NbPath { theta, z })
}

/// Conditioning information for the log-mgf gap of one evolution step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbGapContext {
    /// Filtered `(a[t], b[t])`.
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub c: f64,
    pub q: f64,
}

impl NbGapContext {
    pub fn from_transition(step: &NbTransition) -> Self {
        Self {
            a: step.filtered.a,
            b: step.filtered.b,
            delta: step.delta,
            c: step.c,
            q: step.ratio / step.delta.max(f64::MIN_POSITIVE),
        }
    }

    fn a_next(&self) -> f64 {
        self.q * (self.delta * self.a + self.c * self.b)
    }

    fn b_next(&self) -> f64 {
        self.q * self.b
    }

    /// Supremum of the positive half of the domain.
    pub fn s_max(&self) -> f64 {
        let bound = if self.delta > 0.0 { self.b / self.delta } else { f64::INFINITY };
        bound.min(self.b_next())
    }
}

/// `D(s) = a ln(1 - delta s/b) - c s - q (delta a + c b) ln(1 - s/(q b))`.
pub fn mgf_gap(s: f64, ctx: &NbGapContext) -> Result<f64> {
    if !s.is_finite() || s >= ctx.s_max() {
        return Err(Error::domain(format!("s = {s} outside the mgf domain (< {})", ctx.s_max())));
    }
    let t1 = (-ctx.delta * s / ctx.b).ln_1p();
    let t2 = (-s / ctx.b_next()).ln_1p();
    Ok(ctx.a * t1 - ctx.c * s - ctx.a_next() * t2)
}

/// `D` at `s = s_max (1 - u)`, keeping full precision as `u -> 0`.
fn gap_at_u(u: f64, ctx: &NbGapContext) -> (f64, f64) {
    let s_max = ctx.s_max();
    let s = s_max * (1.0 - u);
    let log_arg = |bound: f64| {
        let rho = s_max / bound;
        if rho >= 1.0 {
            u.ln()
        } else {
            ((1.0 - rho) + rho * u).ln()
        }
    };
    let t1 = if ctx.delta > 0.0 { log_arg(ctx.b / ctx.delta) } else { 0.0 };
    let t2 = log_arg(ctx.b_next());
    (s, ctx.a * t1 - ctx.c * s - ctx.a_next() * t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbGapScan {
    pub grid_min: f64,
    pub grid_argmin: f64,
    pub witness: Option<(f64, f64)>,
}

/// Scans `s` toward the domain boundary, with distance to the boundary
/// log-spaced from 1 down to 1e-300.
pub fn scan_mgf_gap(ctx: &NbGapContext) -> NbGapScan {
    let mut out = NbGapScan { grid_min: f64::INFINITY, grid_argmin: f64::NAN, witness: None };
    let mut record = |s: f64, d: f64| {
        if d < out.grid_min {
            out.grid_min = d;
            out.grid_argmin = s;
        }
        if out.witness.is_none() && d < WITNESS_THRESHOLD {
            out.witness = Some((s, d));
        }
    };
    if ctx.s_max().is_finite() {
        for u in log_grid(1e-300, 1.0, 400).into_iter().rev() {
            let (s, d) = gap_at_u(u, ctx);
            record(s, d);
        }
    } else {
        for s in log_grid(1e-3, 1e6, 200) {
            if let Ok(d) = mgf_gap(s, ctx) {
                record(s, d);
            }
        }
    }
    out
}
