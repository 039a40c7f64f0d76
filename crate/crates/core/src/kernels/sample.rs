use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};

pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::domain(format!("poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::domain(format!("poisson({mean}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

pub fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("binomial probability must lie in [0, 1], got {p}")));
    }
    if n == 0 || p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    let dist = Binomial::new(n, p).map_err(|e| Error::domain(format!("binomial({n}, {p}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Gamma with shape/rate parameterization; shape 0 is the point mass at 0.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape.is_finite() && shape >= 0.0) || !(rate.is_finite() && rate > 0.0) {
        return Err(Error::domain(format!("gamma({shape}, {rate}) has invalid parameters")));
    }
    if shape == 0.0 {
        return Ok(0.0);
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(format!("gamma: {e}")))?;
    Ok(dist.sample(rng))
}

/// Beta(a, b); `b = 0` is the point mass at 1 and `a = 0` the point mass at 0.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0) || (a == 0.0 && b == 0.0) {
        return Err(Error::domain(format!("beta({a}, {b}) has invalid parameters")));
    }
    if b == 0.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let dist = Beta::new(a, b).map_err(|e| Error::domain(format!("beta: {e}")))?;
    Ok(dist.sample(rng))
}

/// NB(kappa, pi) drawn as a Gamma(kappa, (1-pi)/pi) mixture of Poissons.
pub fn sample_nb<R: Rng + ?Sized>(kappa: f64, pi: f64, rng: &mut R) -> Result<u64> {
    if !(kappa.is_finite() && kappa > 0.0) || !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!("nb({kappa}, {pi}) has invalid parameters")));
    }
    let theta = sample_gamma(kappa, (1.0 - pi) / pi, rng)?;
    sample_poisson(theta, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RngStream;

    #[test]
    fn degenerate_conventions() {
        let mut rng = RngStream::root(1).rng();
        for _ in 0..100 {
            assert_eq!(sample_binomial(0, 0.3, &mut rng).unwrap(), 0);
            assert_eq!(sample_gamma(0.0, 2.0, &mut rng).unwrap(), 0.0);
            assert_eq!(sample_beta(2.0, 0.0, &mut rng).unwrap(), 1.0);
            assert_eq!(sample_beta(0.0, 2.0, &mut rng).unwrap(), 0.0);
            assert_eq!(sample_poisson(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut rng = RngStream::root(1).rng();
        assert!(sample_poisson(-1.0, &mut rng).is_err());
        assert!(sample_binomial(3, 1.5, &mut rng).is_err());
        assert!(sample_gamma(1.0, 0.0, &mut rng).is_err());
        assert!(sample_beta(0.0, 0.0, &mut rng).is_err());
        assert!(sample_nb(1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn reproducible_given_stream() {
        let draw = |s| {
            let mut rng = RngStream::new(9, s).rng();
            (0..20).map(|_| sample_poisson(2.5, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }
}
