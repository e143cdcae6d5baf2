use crate::dab::{self, DabParams};
use crate::error::Result;

use super::dataset::{generate_dataset, DatasetGrid};
use super::nsp::{train, NspBank, TrainConfig, TrainReport};

/// Generate a residual dataset and train one predictor for each load
/// fraction. The dataset of load `i` uses seed `seed + i`.
pub fn train_bank(
    params: &DabParams,
    load_fractions: &[f64],
    grid: &DatasetGrid,
    cfg: &TrainConfig,
    dead_time: f64,
    seed: u64,
) -> Result<(NspBank, Vec<(f64, TrainReport)>)> {
    params.validate()?;
    let layout = dab::bridge_layout();
    let states = layout.conduction_states();
    let mut bank = NspBank::default();
    let mut reports = Vec::new();
    for (i, frac) in load_fractions.iter().enumerate() {
        let r = params.load_resistance(*frac);
        let model = dab::compile_model(params, r)?;
        let ds = generate_dataset(&[(r, &model)], &layout, params.period(), dead_time, grid, seed.wrapping_add(i as u64))?;
        let (nsp, report) = train(&ds, cfg, &states)?;
        bank.insert(r, nsp);
        reports.push((r, report));
    }
    Ok((bank, reports))
}
