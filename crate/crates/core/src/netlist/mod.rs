//! Netlist parsing, state-space synthesis and the switching-state increment table.

mod lut;
mod parse;
mod synth;

pub use lut::{
    k_diagonal, precompute_lut, IncrementLut, LtiSystem, LutRecord, ModelDocument, PiecewiseModel,
    Segment, SwitchedSystem, TableSystem, MODEL_FORMAT_VERSION,
};
pub use parse::{
    parse_netlist, parse_value, to_text, Branch, BranchKind, Netlist, NodeId, SwitchParams,
    DEFAULT_OFF_CONDUCTANCE, DEFAULT_ON_CONDUCTANCE,
};
pub use synth::{synthesize_base, synthesize_base_with, BaseModel, SwitchGain, FALLBACK_BASE_FRACTION};

use crate::error::Result;
use crate::switch_state::SwitchState;

/// Parse-free shortcut: synthesise and tabulate the given states.
pub fn compile(net: &Netlist, states: &[SwitchState]) -> Result<PiecewiseModel> {
    let base = synthesize_base(net)?;
    let lut = precompute_lut(&base, states)?;
    PiecewiseModel::new(base, lut)
}

/// Conductance of every switch when the netlist sits in state `s`.
pub fn state_conductances(net: &Netlist, s: &SwitchState) -> Vec<f64> {
    net.switches()
        .zip(s.bits())
        .map(|(b, on)| {
            let p = b.switch.expect("switch params");
            if *on {
                p.on_conductance
            } else {
                p.off_conductance
            }
        })
        .collect()
}
