//! Synthetic panels drawn from the lifted (observation-driven) form of either
//! model, with one-hot group covariates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{DeltaPolicy, ModelKind};
use crate::kernels::special::logistic;
use crate::kernels::RngStream;
use crate::nb::{self, NbParams};
use crate::panel::{Panel, PanelObservation};
use crate::poisson::{self, PoissonParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDesign {
    pub model: ModelKind,
    pub n_entities: usize,
    pub periods: u32,
    /// One coefficient per group; entity `i` belongs to a uniformly drawn
    /// group and carries the indicator vector of that group.
    pub coefficients: Vec<f64>,
    pub delta: f64,
    pub delta_policy: DeltaPolicy,
    /// NB anchor shape `a[1|0]`.
    pub a_anchor: f64,
    /// Poisson anchor mean.
    pub mu: f64,
    /// Probability that a period carries exposure.
    pub exposure_prob: f64,
    /// Probability that an exposed period's count goes unrecorded.
    pub absent_prob: f64,
}

impl Default for PanelDesign {
    fn default() -> Self {
        Self {
            model: ModelKind::Nb,
            n_entities: 2000,
            periods: 6,
            coefficients: vec![-1.0, 0.5],
            delta: 0.8,
            delta_policy: DeltaPolicy::StationaryFromAnchor,
            a_anchor: 1.5,
            mu: 2.0,
            exposure_prob: 1.0,
            absent_prob: 0.0,
        }
    }
}

impl PanelDesign {
    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.coefficients.len()).map(|g| format!("g{g}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::domain("design needs at least one group"));
        }
        if self.periods == 0 {
            return Err(Error::domain("design needs at least one period"));
        }
        for (name, p) in [("exposure_prob", self.exposure_prob), ("absent_prob", self.absent_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// True latent value behind one emitted row (plus the Poisson anchor at period 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub entity_id: String,
    pub period: u32,
    pub theta: f64,
    pub claims: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPanel {
    pub panel: Panel,
    pub latent: Vec<LatentRow>,
}

/// Draws a panel; entity `i` uses stream `split(i)` of the root seed, so any
/// entity's series is independent of `n_entities`.
pub fn simulate_panel(design: &PanelDesign, seed: u64) -> Result<SimulatedPanel> {
    design.validate()?;
    let root = RngStream::root(seed).split_str("panel");
    let groups = design.coefficients.len();
    let periods = design.periods as usize;
    let mut rows = Vec::with_capacity(design.n_entities * periods);
    let mut latent = Vec::with_capacity(design.n_entities * (periods + 1));
    for i in 0..design.n_entities {
        let mut rng = root.split(i as u64).rng();
        let id = format!("E{:05}", i + 1);
        let g = rng.random_range(0..groups);
        let x: Vec<f64> = (0..groups).map(|j| f64::from(u8::from(j == g))).collect();
        let eta = design.coefficients[g];
        let exposed: Vec<bool> = (0..periods).map(|_| rng.random::<f64>() < design.exposure_prob).collect();

        let (theta, z): (Vec<f64>, Vec<u64>) = match design.model {
            ModelKind::Poisson => {
                let p_t = logistic(eta);
                let mut w = vec![true];
                w.extend(&exposed);
                let p = vec![p_t; periods + 1];
                let params = match design.delta_policy {
                    DeltaPolicy::StationaryFromAnchor => PoissonParams::stationary(design.mu, design.delta, p, w)?,
                    DeltaPolicy::FreeScalar => {
                        PoissonParams::new(design.mu, vec![design.delta; periods + 1], p, w, None)?
                    }
                    DeltaPolicy::FixedOne => PoissonParams::new(design.mu, vec![1.0; periods + 1], p, w, None)?,
                };
                let path = poisson::simulate_lifted(&params, &mut rng)?;
                latent.push(LatentRow {
                    entity_id: id.clone(),
                    period: 0,
                    theta: path.theta[0] as f64,
                    claims: path.z[0],
                });
                (path.theta[1..].iter().map(|&t| t as f64).collect(), path.z[1..].to_vec())
            }
            ModelKind::Nb | ModelKind::RandomEffects => {
                let delta = if design.model == ModelKind::RandomEffects { 1.0 } else { design.delta };
                let params =
                    NbParams::new(design.a_anchor, vec![delta; periods], vec![eta.exp(); periods], exposed.clone())?;
                let path = nb::simulate_lifted(&params, &mut rng)?;
                (path.theta, path.z)
            }
        };
        for t in 0..periods {
            let period = t as u32 + 1;
            let absent = exposed[t] && rng.random::<f64>() < design.absent_prob;
            rows.push(PanelObservation {
                entity_id: id.clone(),
                period,
                count: if absent { None } else { Some(z[t]) },
                exposure: Some(exposed[t]),
                covariates: x.clone(),
            });
            latent.push(LatentRow { entity_id: id.clone(), period, theta: theta[t], claims: z[t] });
        }
    }
    Ok(SimulatedPanel { panel: Panel::from_observations(design.covariate_names(), rows)?, latent })
}
