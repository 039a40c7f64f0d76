//! Fixtures shared by the benchmarks.

use ingarch::estimation::{DeltaPolicy, Estimates, LinkSpec, ModelKind, PreparedPanel};
use ingarch::simulate::{simulate_panel, PanelDesign};
use ingarch::Result;

/// A simulated two-group panel with the parameters that generated it.
pub struct Fixture {
    pub panel: PreparedPanel,
    pub model: ModelKind,
    pub policy: DeltaPolicy,
    pub truth: Estimates,
}

pub fn fixture(model: ModelKind, n_entities: usize, periods: u32) -> Result<Fixture> {
    let design = PanelDesign { model, n_entities, periods, ..PanelDesign::default() };
    let sim = simulate_panel(&design, 42)?;
    let panel = PreparedPanel::new(&sim.panel, &LinkSpec::all(&sim.panel))?;
    let truth = Estimates {
        coefficients: design.coefficients.clone(),
        delta: design.delta,
        mu: model.is_poisson().then_some(design.mu),
        a_anchor: (!model.is_poisson()).then_some(design.a_anchor),
    };
    Ok(Fixture { panel, model, policy: design.delta_policy, truth })
}
