use serde::{Deserialize, Serialize};

use super::special::{ln_factorial, ln_rising};
use crate::error::{Error, Result};

/// One evaluated point of a count pmf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountPmfEval {
    pub value: u64,
    pub log_prob: f64,
}

/// `ln Poi(k; mean)`. A zero mean is the point mass at zero.
pub fn poisson_logpmf(k: u64, mean: f64) -> Result<f64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::domain(format!("poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(k as f64 * mean.ln() - mean - ln_factorial(k))
}

/// `ln NB(k; kappa, pi)` with pmf `Γ(k+κ)/(Γ(κ) k!) (1-π)^κ π^k`, mean `κπ/(1-π)`.
pub fn nb_logpmf(k: u64, kappa: f64, pi: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::domain(format!("nb size must be finite and > 0, got {kappa}")));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!("nb probability must lie in (0, 1), got {pi}")));
    }
    let kf = k as f64;
    let tail = if k == 0 { 0.0 } else { kf * pi.ln() };
    Ok(ln_rising(kappa, k) - ln_factorial(k) + kappa * (-pi).ln_1p() + tail)
}

pub fn binomial_logpmf(k: u64, n: u64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("binomial probability must lie in [0, 1], got {p}")));
    }
    if k > n {
        return Ok(f64::NEG_INFINITY);
    }
    let (kf, rest) = (k as f64, (n - k) as f64);
    let head = if k == 0 { 0.0 } else { kf * p.ln() };
    let tail = if n == k { 0.0 } else { rest * (-p).ln_1p() };
    Ok(ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k) + head + tail)
}

/// Enumerate a count pmf from zero until the accumulated mass reaches
/// `1 - tail_mass` (or `max_len` points).
pub fn truncated_support<F>(logpmf: F, tail_mass: f64, max_len: usize) -> Result<Vec<CountPmfEval>>
where
    F: Fn(u64) -> Result<f64>,
{
    let mut out = Vec::new();
    let mut mass = 0.0;
    for k in 0..max_len as u64 {
        let log_prob = logpmf(k)?;
        mass += log_prob.exp();
        out.push(CountPmfEval { value: k, log_prob });
        if mass >= 1.0 - tail_mass {
            break;
        }
    }
    Ok(out)
}
