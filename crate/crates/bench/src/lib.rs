//! Shared fixtures for the benchmarks: the default converter at one load,
//! one TPS cycle and a predictor with the trained architecture.
//!
//! The predictor's weights are zero, which costs exactly as much to evaluate
//! as a trained one and keeps the benchmarks independent of training output.

use nalgebra::DVector;
use twinmpc_core::control::periodic_steady_state;
use twinmpc_core::dab::{self, DabParams};
use twinmpc_core::modulation::{build_timeline, PhaseShiftCommand, Scheme, SwitchTimeline};
use twinmpc_core::netlist::PiecewiseModel;
use twinmpc_core::objectives::{extract_metrics, total_cost, CostSpec};
use twinmpc_core::surrogate::{NspModel, TrainConfig};
use twinmpc_core::Result;

pub struct Fixture {
    pub params: DabParams,
    pub model: PiecewiseModel,
    pub timeline: SwitchTimeline,
    pub x0: DVector<f64>,
    pub nsp: NspModel,
    pub cost: CostSpec,
}

impl Fixture {
    pub fn new(load_fraction: f64) -> Result<Self> {
        let params = DabParams::default();
        let model = dab::compile_model(&params, params.load_resistance(load_fraction))?;
        let layout = dab::bridge_layout();
        let timeline = build_timeline(&PhaseShiftCommand::tps(0.3, 0.2, 0.1), &layout, params.period(), 0.0)?;
        let x0 = periodic_steady_state(&model, &timeline, &DVector::zeros(3))?;
        let nsp = NspModel::zeroed(&layout.conduction_states(), &TrainConfig::default().hidden, 3, 1.0)?;
        Ok(Fixture {
            params,
            model,
            timeline,
            x0,
            nsp,
            cost: CostSpec::default(),
        })
    }

    /// Predicted one-cycle cost of a TPS command from `x0`.
    pub fn cost(&self, u: &[f64]) -> Result<f64> {
        let cmd = PhaseShiftCommand::from_vector(Scheme::Tps, u)?;
        let tl = build_timeline(&cmd, &dab::bridge_layout(), self.params.period(), 0.0)?;
        let pr = self.nsp.predict_cycle(&self.model, &tl, &self.x0)?;
        Ok(total_cost(&extract_metrics(&pr.segment_states, &tl, &self.cost), &self.cost))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds_and_cost_is_finite() {
        let f = Fixture::new(0.3).unwrap();
        assert_eq!(f.x0.len(), 3);
        assert!(f.cost(&[0.25, 0.25, 0.25]).unwrap().is_finite());
    }
}
