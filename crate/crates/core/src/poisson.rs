//! Poisson-INGARCH(1,1) as a binomial-observation / Poisson-evolution
//! marginalized linear state-space model.
//!
//! The latent count `Θ[t]` has predictive law `Poi(mu[t|t-1])` given past
//! counts, and `Z[t] | Θ[t] ~ Binom(Θ[t], p*[t])` with `p*[t] = w[t] p[t]`.
//! Filtering and evolution are both affine in the latent mean:
//!
//! ```text
//! mu[t]      = Z[t] + (1 - p*[t]) mu[t|t-1]
//! mu[t+1|t]  = delta[t] mu[t] + c[t]
//! ```
//!
//! Panel series are anchored at an internal period `t = 0` with
//! `Θ[0] ~ Poi(mu)`; index 0 of every per-period vector in [`PoissonParams`]
//! refers to that anchor period.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coeffs::IngarchCoeffs;
use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{poisson_logpmf, sample_binomial, sample_poisson};

/// Predictive latent mean `mu[t|t-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonState {
    pub mu_pred: f64,
}

impl PoissonState {
    pub fn new(mu_pred: f64) -> Result<Self> {
        if mu_pred.is_finite() && mu_pred > 0.0 {
            Ok(Self { mu_pred })
        } else {
            Err(Error::Degenerate(format!("predictive mean must be > 0, got {mu_pred}")))
        }
    }
}

fn check_p_star(p_star: f64) -> Result<()> {
    if (0.0..1.0).contains(&p_star) {
        Ok(())
    } else {
        Err(Error::domain(format!("thinning probability must lie in [0, 1), got {p_star}")))
    }
}

/// Filtered latent mean `E[Θ[t] | Z[<=t]] = z + (1 - p*) mu[t|t-1]`.
///
/// With `p_star = 0` the period carried no exposure and filtering is skipped.
pub fn filter(state: PoissonState, z: u64, p_star: f64) -> Result<f64> {
    check_p_star(p_star)?;
    if p_star == 0.0 {
        if z > 0 {
            return Err(Error::ZeroExposureCount { count: z });
        }
        return Ok(state.mu_pred);
    }
    Ok(z as f64 + (1.0 - p_star) * state.mu_pred)
}

/// Real-valued variant of [`filter`] used for mean imputation.
pub fn filter_mean(state: PoissonState, z: f64, p_star: f64) -> Result<f64> {
    check_p_star(p_star)?;
    ensure_finite("z", z)?;
    if p_star == 0.0 {
        return Ok(state.mu_pred);
    }
    Ok(z + (1.0 - p_star) * state.mu_pred)
}

/// `mu[t+1|t] = delta * filtered_mean + c`.
pub fn evolve(filtered_mean: f64, delta: f64, c: f64) -> Result<PoissonState> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::domain(format!("delta must be finite and >= 0, got {delta}")));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::domain(format!("c must be finite and >= 0, got {c}")));
    }
    PoissonState::new(delta * filtered_mean + c)
}

/// Mean of the one-step predictive count law, `p* mu[t|t-1]`.
pub fn predictive_mean(state: PoissonState, p_star: f64) -> f64 {
    p_star * state.mu_pred
}

/// `ln P(Z[t] = z | Z[<t])`, the thinned law `Poi(p* mu[t|t-1])`.
pub fn predictive_logpmf(state: PoissonState, p_star: f64, z: u64) -> Result<f64> {
    check_p_star(p_star)?;
    if p_star == 0.0 {
        return if z == 0 { Ok(0.0) } else { Err(Error::ZeroExposureCount { count: z }) };
    }
    poisson_logpmf(z, p_star * state.mu_pred)
}

/// One period of state-space parameters recovered from INGARCH coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMlssm {
    pub p: f64,
    pub delta: f64,
    pub c: f64,
}

/// State-space parameters to INGARCH coefficients:
/// `beta0 = p' c`, `beta1 = p' delta`, `beta2 = p' delta (1/p - 1)` with `p'` the
/// next period's thinning probability.
pub fn to_ingarch(delta: f64, c: f64, p_t: f64, p_next: f64) -> Result<IngarchCoeffs> {
    for (name, p) in [("p_t", p_t), ("p_next", p_next)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    if delta == 0.0 {
        return Err(Error::MapUndefined("delta = 0 leaves beta1 and beta2 at zero".into()));
    }
    if !(delta.is_finite() && delta > 0.0) || !(c.is_finite() && c >= 0.0) {
        return Err(Error::domain(format!("need delta > 0 and c >= 0, got delta={delta}, c={c}")));
    }
    Ok(IngarchCoeffs { beta0: p_next * c, beta1: p_next * delta, beta2: p_next * delta * (1.0 / p_t - 1.0) })
}

/// Thinning probability implied by one period's coefficients.
pub fn implied_p(coeffs: &IngarchCoeffs) -> Result<f64> {
    coeffs.validate()?;
    Ok(coeffs.beta1 / (coeffs.beta1 + coeffs.beta2))
}

/// The unique state-space parameters inducing the coefficients of period `t`.
/// `delta` and `c` depend on `p[t+1]`, hence on the successor's coefficients.
pub fn from_ingarch(current: &IngarchCoeffs, successor: Option<&IngarchCoeffs>) -> Result<PoissonMlssm> {
    let p = implied_p(current)?;
    let next = successor.ok_or(Error::NeedsSuccessor)?;
    let p_next = implied_p(next)?;
    Ok(PoissonMlssm { p, delta: current.beta1 / p_next, c: current.beta0 / p_next })
}

/// Inverts a whole coefficient path; the result has one entry fewer than
/// the input since the last period lacks a successor.
pub fn from_ingarch_series(coeffs: &[IngarchCoeffs]) -> Result<Vec<PoissonMlssm>> {
    if coeffs.len() < 2 {
        return Err(Error::NeedsSuccessor);
    }
    coeffs.windows(2).map(|w| from_ingarch(&w[0], Some(&w[1]))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryDelta {
    pub delta: f64,
    /// Set when both thinning terms vanish and the value 1 was chosen by
    /// continuity rather than determined by the variance condition.
    pub by_convention: bool,
}

/// Evolution weight keeping `Var(Θ[t])` equal to `Var(Θ[1])`:
/// `delta_t^2 = delta0^2 p0* / (delta0^2 p0* + pt*)`.
pub fn stationary_delta(delta0: f64, pstar0: f64, pstar_t: f64) -> Result<StationaryDelta> {
    if !(0.0..=1.0).contains(&delta0) {
        return Err(Error::domain(format!("delta0 must lie in [0, 1], got {delta0}")));
    }
    check_p_star(pstar0)?;
    check_p_star(pstar_t)?;
    let num = delta0 * delta0 * pstar0;
    let den = num + pstar_t;
    if den == 0.0 {
        return Ok(StationaryDelta { delta: 1.0, by_convention: true });
    }
    Ok(StationaryDelta { delta: (num / den).sqrt(), by_convention: false })
}

/// Exogenous inputs of the anchored Poisson model, indexed `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub mu: f64,
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub w: Vec<bool>,
    /// Evolution intercepts; `None` means `(1 - delta[t]) mu`.
    pub c: Option<Vec<f64>>,
}

impl PoissonParams {
    pub fn new(mu: f64, delta: Vec<f64>, p: Vec<f64>, w: Vec<bool>, c: Option<Vec<f64>>) -> Result<Self> {
        let params = Self { mu, delta, p, w, c };
        params.validate()?;
        Ok(params)
    }

    /// Deltas chosen by [`stationary_delta`] from the anchor period's weight
    /// `delta0`, so that `Var(Θ[t])` is constant for `t >= 1`.
    pub fn stationary(mu: f64, delta0: f64, p: Vec<f64>, w: Vec<bool>) -> Result<Self> {
        if p.len() != w.len() || p.is_empty() {
            return Err(Error::domain("p and w must have equal, non-zero length"));
        }
        let pstar0 = if w[0] { p[0] } else { 0.0 };
        let mut delta = Vec::with_capacity(p.len());
        delta.push(delta0);
        for t in 1..p.len() {
            let pstar_t = if w[t] { p[t] } else { 0.0 };
            delta.push(stationary_delta(delta0, pstar0, pstar_t)?.delta);
        }
        Self::new(mu, delta, p, w, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::domain(format!("mu must be > 0, got {}", self.mu)));
        }
        let n = self.p.len();
        if n == 0 || self.delta.len() != n || self.w.len() != n {
            return Err(Error::domain("delta, p and w must share a non-zero length"));
        }
        if let Some(c) = &self.c {
            if c.len() != n {
                return Err(Error::domain("c must match the other per-period vectors"));
            }
        }
        for t in 0..n {
            let (d, p, c) = (self.delta[t], self.p[t], self.c_at(t));
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::domain(format!("delta[{t}] must be >= 0, got {d}")));
            }
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::domain(format!("p[{t}] must lie in (0, 1), got {p}")));
            }
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::domain(format!("c[{t}] must be >= 0, got {c}")));
            }
        }
        if (0..n).all(|t| self.delta[t] == 0.0 && self.c_at(t) == 0.0) {
            return Err(Error::domain("(delta, c) = (0, 0) in every period"));
        }
        Ok(())
    }

    /// Last period index `T`.
    pub fn horizon(&self) -> usize {
        self.p.len() - 1
    }

    pub fn p_star(&self, t: usize) -> f64 {
        if self.w[t] {
            self.p[t]
        } else {
            0.0
        }
    }

    pub fn c_at(&self, t: usize) -> f64 {
        match &self.c {
            Some(c) => c[t],
            None => (1.0 - self.delta[t]) * self.mu,
        }
    }

    pub fn in_lift_region(&self) -> bool {
        self.delta.iter().all(|&d| d <= 1.0)
    }
}

/// Unconditional moments at one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonMoments {
    pub t: usize,
    pub mean_theta: f64,
    pub var_theta: f64,
    pub mean_z: f64,
    pub var_z: f64,
    /// `Cov(Z[t], Z[t+k])` for `k = 1, 2, ...` up to the horizon.
    pub autocov_z: Vec<f64>,
}

/// Closed-form moments for `t = 0..=horizon`.
///
/// Uses `E[Θ[t+1]] = delta E[Θ[t]] + c` and
/// `Var(Θ[t+1]) = E[Θ[t+1]] + delta^2 (Var(Θ[t]) - (1 - p*) E[Θ[t]])`, which for
/// `c = (1 - delta) mu` reduces to the anchored recursion
/// `delta^2 Var(Θ[t]) + mu (1 - delta^2 (1 - w p))`.
pub fn moments(params: &PoissonParams, horizon: usize) -> Result<Vec<PoissonMoments>> {
    params.validate()?;
    if horizon > params.horizon() {
        return Err(Error::domain(format!(
            "horizon {horizon} exceeds the parameterized periods ({})",
            params.horizon()
        )));
    }
    if params.delta[..horizon].iter().any(|&d| d > 1.0) {
        return Err(Error::LiftRefused("covariances need a linear lift, which exists only for delta <= 1".into()));
    }
    let mut mean = vec![params.mu; horizon + 1];
    let mut var = vec![params.mu; horizon + 1];
    for t in 0..horizon {
        let d = params.delta[t];
        mean[t + 1] = d * mean[t] + params.c_at(t);
        var[t + 1] = mean[t + 1] + d * d * (var[t] - (1.0 - params.p_star(t)) * mean[t]);
    }
    let out = (0..=horizon)
        .map(|t| {
            let ps = params.p_star(t);
            let mut autocov = Vec::with_capacity(horizon - t);
            let mut prod = 1.0;
            for s in t + 1..=horizon {
                prod *= params.delta[s - 1];
                autocov.push(ps * params.p_star(s) * prod * var[t]);
            }
            PoissonMoments {
                t,
                mean_theta: mean[t],
                var_theta: var[t],
                mean_z: ps * mean[t],
                var_z: ps * mean[t] + ps * ps * (var[t] - mean[t]),
                autocov_z: autocov,
            }
        })
        .collect();
    Ok(out)
}

/// Counts `Z[0..=T]` drawn from the marginal (filter-driven) form: each
/// `Θ[t+1]` is a fresh `Poi(mu[t+1|t])` draw given the observed counts.
pub fn simulate_marginal<R: Rng + ?Sized>(params: &PoissonParams, rng: &mut R) -> Result<Vec<u64>> {
    params.validate()?;
    let mut state = PoissonState::new(params.mu)?;
    let mut z = Vec::with_capacity(params.p.len());
    for t in 0..=params.horizon() {
        let theta = sample_poisson(state.mu_pred, rng)?;
        let ps = params.p_star(t);
        let zt = sample_binomial(theta, ps, rng)?;
        z.push(zt);
        if t < params.horizon() {
            let filtered = filter(state, zt, ps)?;
            state = evolve(filtered, params.delta[t], params.c_at(t))?;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonPath {
    pub theta: Vec<u64>,
    pub z: Vec<u64>,
}

/// One step of the thinning coupling: survivors `Binom(Θ - Z, delta)` plus
/// recruits `Poi(delta Z + c)`. Conditional on the counts, the result is
/// `Poi(mu[t+1|t])` and its mean given `Θ[t]` is `delta Θ[t] + c`.
pub fn lift_step<R: Rng + ?Sized>(theta: u64, z: u64, delta: f64, c: f64, rng: &mut R) -> Result<u64> {
    if delta > 1.0 {
        return Err(Error::LiftRefused(format!(
            "delta = {delta} > 1: the convex-order condition 0 <= delta <= 1 fails"
        )));
    }
    if z > theta {
        return Err(Error::domain(format!("count {z} exceeds latent population {theta}")));
    }
    let survivors = sample_binomial(theta - z, delta, rng)?;
    let recruits = sample_poisson(delta * z as f64 + c, rng)?;
    Ok(survivors + recruits)
}

/// Joint latent/observed path from the observation-driven lift.
pub fn simulate_lifted<R: Rng + ?Sized>(params: &PoissonParams, rng: &mut R) -> Result<PoissonPath> {
    params.validate()?;
    let horizon = params.horizon();
    if let Some(d) = params.delta[..horizon].iter().find(|&&d| d > 1.0) {
        return Err(Error::LiftRefused(format!("delta = {d} > 1: a linear lift exists iff 0 <= delta <= 1")));
    }
    let mut theta = Vec::with_capacity(horizon + 1);
    let mut z = Vec::with_capacity(horizon + 1);
    let mut th = sample_poisson(params.mu, rng)?;
    for t in 0..=horizon {
        let zt = sample_binomial(th, params.p_star(t), rng)?;
        theta.push(th);
        z.push(zt);
        if t < horizon {
            th = lift_step(th, zt, params.delta[t], params.c_at(t), rng)?;
        }
    }
    Ok(PoissonPath { theta, z })
}

/// Conditioning information for the log-mgf gap of one evolution step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonGapContext {
    pub delta: f64,
    pub c: f64,
    pub p_star: f64,
    pub mu_pred: f64,
    pub z: u64,
}

impl PoissonGapContext {
    /// `mu[t+1|t]` fixed by mean matching.
    pub fn mu_next(&self) -> f64 {
        self.delta * (self.z as f64 + (1.0 - self.p_star) * self.mu_pred) + self.c
    }
}

/// `D(s) = ln E[e^{sY}] - ln E[e^{sX}]` for `Y ~ Poi(mu[t+1|t])` and
/// `X = delta (Z + K) + c`, `K ~ Poi((1 - p*) mu[t|t-1])`.
///
/// Evaluated as `k (e^s - 1 - s) + lam (delta (e^s - 1) - (e^{delta s} - 1))` with
/// `k = delta z + c`, `lam = (1 - p*) mu[t|t-1]`; both summands are
/// non-negative when `delta <= 1`, so no cancellation can flip the sign.
pub fn mgf_gap(s: f64, ctx: &PoissonGapContext) -> f64 {
    let k = ctx.delta * ctx.z as f64 + ctx.c;
    let lam = (1.0 - ctx.p_star) * ctx.mu_pred;
    let em1 = s.exp_m1();
    let direct = k * (em1 - s) + lam * (ctx.delta * em1 - (ctx.delta * s).exp_m1());
    if !direct.is_nan() {
        return direct;
    }
    // Overflowed: e^s (mu' - lam e^{(delta-1)s}) keeps the sign.
    let mu_next = k + lam * ctx.delta;
    let bracket = mu_next - lam * ((ctx.delta - 1.0) * s).exp();
    s.exp() * bracket + (lam - mu_next - k * s)
}

/// The default scan grid: 200 log-spaced points in `[1e-3, 50]`.
pub fn gap_grid() -> Vec<f64> {
    log_grid(1e-3, 50.0, 200)
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Result of scanning the gap for a convex-order violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    /// Minimum over the default grid.
    pub grid_min: f64,
    pub grid_argmin: f64,
    /// First `(s, D(s))` with `D(s) < -1e-6`, searching the grid first and
    /// then larger `s` where the violation of a `delta > 1` context must
    /// eventually appear.
    pub witness: Option<(f64, f64)>,
}

pub const WITNESS_THRESHOLD: f64 = -1e-6;

pub fn scan_mgf_gap(ctx: &PoissonGapContext) -> GapScan {
    let mut grid_min = f64::INFINITY;
    let mut grid_argmin = f64::NAN;
    let mut witness = None;
    for s in gap_grid() {
        let d = mgf_gap(s, ctx);
        if d < grid_min {
            grid_min = d;
            grid_argmin = s;
        }
        if witness.is_none() && d < WITNESS_THRESHOLD {
            witness = Some((s, d));
        }
    }
    if witness.is_none() && ctx.delta > 1.0 {
        // past s_B the bracket mu' - lam e^{(delta-1)s} turns negative
        let k = ctx.delta * ctx.z as f64 + ctx.c;
        let lam = (1.0 - ctx.p_star) * ctx.mu_pred;
        let mu_next = k + lam * ctx.delta;
        let mut candidates: Vec<f64> = (1..=12).map(|j| 50.0 * 2f64.powi(j)).collect();
        if lam > 0.0 {
            let s_b = (mu_next / lam).ln().max(0.0) / (ctx.delta - 1.0);
            candidates.extend((1..=4).map(|j| s_b + j as f64 / (ctx.delta - 1.0)));
            candidates.sort_by(f64::total_cmp);
        }
        witness = candidates.into_iter().map(|s| (s, mgf_gap(s, ctx))).find(|&(_, d)| d < WITNESS_THRESHOLD);
    }
    GapScan { grid_min, grid_argmin, witness }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RngStream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn filter_examples() {
        let s = PoissonState::new(2.0).unwrap();
        assert_eq!(filter(s, 3, 0.5).unwrap(), 4.0);
        assert_eq!(filter(s, 0, 0.0).unwrap(), 2.0);
        assert!(filter(s, 0, 1.0 - 1e-12).unwrap() < 1e-11);
        assert!(matches!(filter(s, 2, 0.0), Err(Error::ZeroExposureCount { count: 2 })));
        assert!(filter(s, 0, 1.0).is_err());
    }

    #[test]
    fn evolve_examples() {
        assert_eq!(evolve(4.0, 1.0, 0.0).unwrap().mu_pred, 4.0);
        assert_eq!(evolve(4.0, 0.0, 1.0).unwrap().mu_pred, 1.0);
        assert!(close(evolve(4.0, 0.8, 0.2).unwrap().mu_pred, 3.4, 1e-15));
        assert!(matches!(evolve(4.0, 0.0, 0.0), Err(Error::Degenerate(_))));
        assert!(evolve(4.0, -0.1, 0.5).is_err());
    }

    #[test]
    fn predictive_logpmf_examples() {
        let s = PoissonState::new(2.0).unwrap();
        assert!(close(predictive_logpmf(s, 0.5, 0).unwrap(), -1.0, 1e-15));
        assert_eq!(predictive_logpmf(s, 0.0, 0).unwrap(), 0.0);
        assert!(close(predictive_logpmf(s, 0.5, 2).unwrap(), (0.5f64 * (-1f64).exp()).ln(), 1e-14));
        assert!(predictive_logpmf(s, 0.0, 1).is_err());
    }

    #[test]
    fn coefficient_map_examples() {
        let c = to_ingarch(0.8, 0.5, 0.4, 0.5).unwrap();
        assert!(close(c.beta0, 0.25, 1e-15) && close(c.beta1, 0.40, 1e-15) && close(c.beta2, 0.60, 1e-15));
        let c = to_ingarch(1.0, 0.0, 0.5, 0.5).unwrap();
        assert_eq!((c.beta0, c.beta1, c.beta2), (0.0, 0.5, 0.5));
        assert!(matches!(to_ingarch(0.0, 0.5, 0.4, 0.5), Err(Error::MapUndefined(_))));
    }

    #[test]
    fn inverse_map_examples() {
        let cur = IngarchCoeffs::new(0.25, 0.40, 0.60).unwrap();
        // successor with beta1 = beta2 has p = 1/2
        let next = IngarchCoeffs::new(0.1, 0.3, 0.3).unwrap();
        assert_eq!(implied_p(&next).unwrap(), 0.5);
        let m = from_ingarch(&cur, Some(&next)).unwrap();
        assert!(close(m.p, 0.4, 1e-15) && close(m.delta, 0.8, 1e-15) && close(m.c, 0.5, 1e-15));
        assert!(matches!(from_ingarch(&cur, None), Err(Error::NeedsSuccessor)));
        let bad = IngarchCoeffs { beta0: 0.1, beta1: 0.3, beta2: 0.0 };
        assert!(from_ingarch(&bad, Some(&next)).is_err());
        assert!(matches!(from_ingarch_series(&[cur]), Err(Error::NeedsSuccessor)));
        assert_eq!(from_ingarch_series(&[cur, next, next]).unwrap().len(), 2);
    }

    #[test]
    fn stationary_delta_examples() {
        let d = stationary_delta(1.0, 0.3, 0.3).unwrap();
        assert!(close(d.delta, std::f64::consts::FRAC_1_SQRT_2, 1e-15));
        assert_eq!(stationary_delta(0.7, 0.3, 0.0).unwrap().delta, 1.0);
        assert_eq!(stationary_delta(0.0, 0.3, 0.4).unwrap().delta, 0.0);
        let conv = stationary_delta(0.5, 0.0, 0.0).unwrap();
        assert!(conv.by_convention && conv.delta == 1.0);
    }

    #[test]
    fn moments_examples() {
        let params = PoissonParams::new(1.0, vec![1.0, 1.0], vec![0.5, 0.5], vec![true, true], None).unwrap();
        let m = moments(&params, 1).unwrap();
        assert!(close(m[1].var_theta, 1.5, 1e-15));
        assert_eq!(m[0].var_theta, 1.0);

        let params = PoissonParams::new(2.0, vec![0.0; 4], vec![0.3; 4], vec![true; 4], None).unwrap();
        for row in moments(&params, 3).unwrap() {
            assert!(row.autocov_z.iter().all(|&c| c == 0.0));
            assert_eq!(row.mean_theta, 2.0);
        }

        // delta = 1 with no exposure anywhere keeps the anchor variance
        let params = PoissonParams::new(1.3, vec![1.0; 5], vec![0.4; 5], vec![false; 5], None).unwrap();
        for row in moments(&params, 4).unwrap() {
            assert!(close(row.var_theta, 1.3, 1e-15));
        }
    }

    #[test]
    fn stationary_params_have_constant_variance() {
        let p = vec![0.3, 0.6, 0.2, 0.45, 0.5, 0.35];
        let w = vec![true, true, false, true, true, true];
        let params = PoissonParams::stationary(1.7, 0.9, p, w).unwrap();
        let m = moments(&params, 5).unwrap();
        for row in &m[2..] {
            assert!(close(row.var_theta, m[1].var_theta, 1e-12));
        }
    }

    #[test]
    fn simulation_is_deterministic_and_degenerate_without_exposure() {
        let params = PoissonParams::new(3.0, vec![0.5; 6], vec![0.4; 6], vec![false; 6], None).unwrap();
        let mut rng = RngStream::root(3).rng();
        assert!(simulate_marginal(&params, &mut rng).unwrap().iter().all(|&z| z == 0));

        let params = PoissonParams::new(3.0, vec![0.5; 6], vec![0.4; 6], vec![true; 6], None).unwrap();
        let a = simulate_lifted(&params, &mut RngStream::root(4).rng()).unwrap();
        let b = simulate_lifted(&params, &mut RngStream::root(4).rng()).unwrap();
        assert_eq!(a, b);
        assert!(a.z.iter().zip(&a.theta).all(|(z, th)| z <= th));
    }

    #[test]
    fn lift_refuses_delta_above_one() {
        let params = PoissonParams::new(1.0, vec![1.5; 3], vec![0.4; 3], vec![true; 3], Some(vec![0.1; 3])).unwrap();
        let mut rng = RngStream::root(1).rng();
        assert!(matches!(simulate_lifted(&params, &mut rng), Err(Error::LiftRefused(_))));
        assert!(simulate_marginal(&params, &mut rng).is_ok());
    }

    #[test]
    fn mgf_gap_examples() {
        let ctx = PoissonGapContext { delta: 0.7, c: 0.3, p_star: 0.4, mu_pred: 2.0, z: 2 };
        assert_eq!(mgf_gap(0.0, &ctx), 0.0);
        let h = 1e-5;
        let deriv = (mgf_gap(h, &ctx) - mgf_gap(-h, &ctx)) / (2.0 * h);
        assert!(deriv.abs() < 1e-8);
        let scan = scan_mgf_gap(&ctx);
        assert!(scan.grid_min >= -1e-10 && scan.witness.is_none());

        let bad = PoissonGapContext { delta: 1.5, ..ctx };
        let scan = scan_mgf_gap(&bad);
        let (s, d) = scan.witness.expect("delta > 1 must violate");
        assert!(s <= 50.0 && d < -1e-6);
    }

    #[test]
    fn witness_found_beyond_grid_for_delta_near_one() {
        let ctx = PoissonGapContext { delta: 1.001, c: 2.0, p_star: 0.9, mu_pred: 1.0, z: 6 };
        let scan = scan_mgf_gap(&ctx);
        assert!(scan.grid_min >= 0.0);
        let (s, d) = scan.witness.unwrap();
        assert!(s > 50.0 && d < -1e-6);
    }
}
