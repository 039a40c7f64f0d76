use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the one-step mean recursion
/// `M[t+1|t] = beta0 + beta1 * Z[t] + beta2 * M[t|t-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngarchCoeffs {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl IngarchCoeffs {
    pub fn new(beta0: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let c = Self { beta0, beta1, beta2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta0.is_finite()
            && self.beta0 >= 0.0
            && self.beta1.is_finite()
            && self.beta1 > 0.0
            && self.beta2.is_finite()
            && self.beta2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("INGARCH coefficients need beta0 >= 0, beta1 > 0, beta2 > 0; got {self:?}")))
        }
    }

    /// Next conditional mean given the latest count and the previous mean.
    pub fn step(&self, z: f64, prev_mean: f64) -> f64 {
        self.beta0 + self.beta1 * z + self.beta2 * prev_mean
    }
}
