//! The dual-active-bridge reference converter: netlist, bridge layout and
//! load conventions.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::{BridgeLayout, Leg};
use crate::netlist::{compile, parse_netlist, PiecewiseModel};

/// Index of the inductor current in the DAB state vector.
pub const I_L: usize = 0;
/// Index of the input capacitor voltage.
pub const V_C1: usize = 1;
/// Index of the output capacitor voltage.
pub const V_C2: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DabParams {
    pub input_voltage: f64,
    pub source_resistance: f64,
    pub inductance: f64,
    pub series_resistance: f64,
    pub c_in: f64,
    pub c_out: f64,
    pub turns_ratio: f64,
    pub on_conductance: f64,
    pub off_conductance: f64,
    pub switching_frequency: f64,
    pub rated_power: f64,
    pub rated_voltage: f64,
    pub min_voltage: f64,
    pub max_voltage: f64,
}

impl Default for DabParams {
    fn default() -> Self {
        DabParams {
            input_voltage: 48.0,
            source_resistance: 20e-3,
            inductance: 1.13e-6,
            series_resistance: 20e-3,
            c_in: 230e-6,
            c_out: 230e-6,
            turns_ratio: 1.0,
            on_conductance: 1e3,
            off_conductance: 0.0,
            switching_frequency: 100e3,
            rated_power: 1000.0,
            rated_voltage: 24.0,
            min_voltage: 16.0,
            max_voltage: 32.0,
        }
    }
}

impl DabParams {
    pub fn period(&self) -> f64 {
        1.0 / self.switching_frequency
    }

    /// Load resistance drawing `fraction` of rated power at rated voltage.
    pub fn load_resistance(&self, fraction: f64) -> f64 {
        self.rated_voltage * self.rated_voltage / (fraction * self.rated_power)
    }

    /// Peak-current scale used to normalise current metrics.
    pub fn rated_peak_current(&self) -> f64 {
        self.rated_power / self.min_voltage
    }

    /// Copy with L and both capacitors scaled, for plant/model mismatch studies.
    pub fn perturbed(&self, factor: f64) -> Self {
        DabParams {
            inductance: self.inductance * factor,
            c_in: self.c_in * factor,
            c_out: self.c_out * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_voltage", self.input_voltage),
            ("source_resistance", self.source_resistance),
            ("inductance", self.inductance),
            ("series_resistance", self.series_resistance),
            ("c_in", self.c_in),
            ("c_out", self.c_out),
            ("turns_ratio", self.turns_ratio),
            ("on_conductance", self.on_conductance),
            ("switching_frequency", self.switching_frequency),
            ("rated_power", self.rated_power),
            ("rated_voltage", self.rated_voltage),
            ("min_voltage", self.min_voltage),
            ("max_voltage", self.max_voltage),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("dab.{name} must be positive, got {v}")));
            }
        }
        if self.off_conductance < 0.0 || self.off_conductance >= self.on_conductance {
            return Err(Error::Config("dab conductances must satisfy 0 <= goff < gon".into()));
        }
        Ok(())
    }
}

/// Netlist text for the converter feeding a resistive load of `load_ohms`.
///
/// Switches S1..S8 are the upper/lower devices of legs A, B (primary) and
/// C, D (secondary). Both bridges share the ground rail; the ideal
/// transformer provides the coupling.
pub fn netlist_text(p: &DabParams, load_ohms: f64) -> String {
    let sw = format!("gon={:?} goff={:?}", p.on_conductance, p.off_conductance);
    format!(
        "# dual active bridge\n\
         .gnd 0\n\
         V1 src 0 {vin:?}\n\
         Rs src p {rs:?}\n\
         C1 p 0 {c1:?}\n\
         S1 p a {sw}\n\
         S2 a 0 {sw}\n\
         S3 p b {sw}\n\
         S4 b 0 {sw}\n\
         Rac a m {rac:?}\n\
         L1 m x {l:?}\n\
         T1 x b s1 s2 {n:?}\n\
         S5 o s1 {sw}\n\
         S6 s1 0 {sw}\n\
         S7 o s2 {sw}\n\
         S8 s2 0 {sw}\n\
         C2 o 0 {c2:?}\n\
         RL o 0 {rl:?}\n",
        vin = p.input_voltage,
        rs = p.source_resistance,
        c1 = p.c_in,
        rac = p.series_resistance,
        l = p.inductance,
        n = p.turns_ratio,
        c2 = p.c_out,
        rl = load_ohms,
    )
}

/// Leg-to-switch mapping matching [`netlist_text`].
///
/// Inductor current flows from node `a` towards the transformer, so it
/// leaves the midpoint of leg A, enters leg B's midpoint, enters leg C's
/// midpoint on the secondary side and leaves leg D's.
pub fn bridge_layout() -> BridgeLayout {
    let leg = |name: &str, upper, lower, current_sign| Leg {
        name: name.into(),
        upper,
        lower,
        current_sign,
    };
    BridgeLayout {
        legs: vec![
            leg("A", 0, 1, -1.0),
            leg("B", 2, 3, 1.0),
            leg("C", 4, 5, 1.0),
            leg("D", 6, 7, -1.0),
        ],
        switch_count: 8,
        current_index: I_L,
    }
}

pub fn compile_model(p: &DabParams, load_ohms: f64) -> Result<PiecewiseModel> {
    if !(load_ohms > 0.0) {
        return Err(Error::InvalidArgument(format!("load must be positive, got {load_ohms}")));
    }
    let net = parse_netlist(&netlist_text(p, load_ohms))?;
    compile(&net, &bridge_layout().conduction_states())
}

/// Compiled models for a fixed set of load resistances.
#[derive(Clone, Debug)]
pub struct ModelBank {
    params: DabParams,
    models: BTreeMap<u64, Arc<PiecewiseModel>>,
}

impl ModelBank {
    pub fn new(params: &DabParams, loads: &[f64]) -> Result<Self> {
        let mut models = BTreeMap::new();
        for &r in loads {
            if let std::collections::btree_map::Entry::Vacant(e) = models.entry(r.to_bits()) {
                e.insert(Arc::new(compile_model(params, r)?));
            }
        }
        Ok(ModelBank {
            params: params.clone(),
            models,
        })
    }

    pub fn params(&self) -> &DabParams {
        &self.params
    }

    pub fn get(&self, load_ohms: f64) -> Result<Arc<PiecewiseModel>> {
        self.models
            .get(&load_ohms.to_bits())
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no compiled model for load {load_ohms} ohm")))
    }

    pub fn loads(&self) -> Vec<f64> {
        self.models.keys().map(|k| f64::from_bits(*k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{synthesize_base, BranchKind, SwitchedSystem};

    #[test]
    fn netlist_matches_table_values() {
        let p = DabParams::default();
        let net = parse_netlist(&netlist_text(&p, 0.576)).unwrap();
        assert_eq!(net.switch_count(), 8);
        assert_eq!(net.branch("L1").unwrap().value, 1.13e-6);
        assert_eq!(net.branch("C1").unwrap().value, 230e-6);
        assert_eq!(net.branch("C2").unwrap().value, 230e-6);
        assert_eq!(net.branch("V1").unwrap().value, 48.0);
        assert_eq!(net.count(BranchKind::IdealTransformer), 1);
    }

    #[test]
    fn three_states() {
        let p = DabParams::default();
        let base = synthesize_base(&parse_netlist(&netlist_text(&p, 1.0)).unwrap()).unwrap();
        assert_eq!(base.state_labels, vec!["i_L1", "v_C1", "v_C2"]);
        assert_eq!(base.input_labels, vec!["V1"]);
    }

    #[test]
    fn load_convention() {
        let p = DabParams::default();
        assert!((p.load_resistance(1.0) - 0.576).abs() < 1e-12);
        assert!((p.load_resistance(0.1) - 5.76).abs() < 1e-12);
    }

    #[test]
    fn bridge_short_drives_inductor_by_input_voltage() {
        // Leg A high, B low, secondary shorted through lower switches:
        // di/dt ~ (v_C1 - 0)/L at i = 0.
        let p = DabParams::default();
        let model = compile_model(&p, 1.0).unwrap();
        let s: crate::SwitchState = "10010101".parse().unwrap();
        let seg = model.segment(&s).unwrap();
        let didt_per_v = seg.a[(I_L, V_C1)];
        assert!((didt_per_v * p.inductance - 1.0).abs() < 0.01, "{didt_per_v}");
        assert!(seg.a[(I_L, V_C2)].abs() * p.inductance < 0.01);
    }
}
