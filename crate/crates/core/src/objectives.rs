//! Per-cycle metrics and the priority-gated cost.
//!
//! `J = J_pri + S(J_pri) * sum_i w_i J_sec,i`, where the gate `S` suppresses
//! the secondary terms while the tracking error is large.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::SwitchTimeline;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    /// `|v_out(end) - v_ref|` in volts.
    pub v_track_err: f64,
    /// Peak-to-peak inductor current over the event samples.
    pub i_pp: f64,
    pub i_peak: f64,
    /// Sum over commanded turn-on events of `max(0, I_min - i_commutating)`.
    pub zvs_deficit: f64,
    pub zvs_events: usize,
    pub zvs_satisfied: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSpec {
    pub v_ref: f64,
    pub w_ipp: f64,
    pub w_zvs: f64,
    pub gate_midpoint: f64,
    pub gate_sharpness: f64,
    /// Current scale for `i_pp` (rated power over minimum voltage).
    pub ipp_norm: f64,
    /// ZVS current threshold in amperes.
    pub i_min: f64,
    /// Index of the output voltage in the state vector.
    pub output_index: usize,
    /// Index of the inductor current in the state vector.
    pub current_index: usize,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            v_ref: 24.0,
            w_ipp: 0.005,
            w_zvs: 2e-4,
            gate_midpoint: 0.04,
            gate_sharpness: 100.0,
            ipp_norm: 1000.0 / 16.0,
            i_min: 2.0,
            output_index: 2,
            current_index: 0,
        }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_ref > 0.0
            && self.w_ipp >= 0.0
            && self.w_zvs >= 0.0
            && self.gate_sharpness > 0.0
            && self.ipp_norm > 0.0
            && self.i_min > 0.0
            && [self.v_ref, self.w_ipp, self.w_zvs, self.gate_midpoint, self.gate_sharpness, self.ipp_norm, self.i_min]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("cost spec: weights must be >= 0 and scales > 0".into()))
        }
    }

    pub fn with_v_ref(&self, v_ref: f64) -> Self {
        CostSpec { v_ref, ..self.clone() }
    }
}

/// Metrics of one cycle from the states at every segment start followed by
/// the end state (the layout of both solver and surrogate outputs).
pub fn extract_metrics(states: &[DVector<f64>], tl: &SwitchTimeline, spec: &CostSpec) -> CycleMetrics {
    let Some(end) = states.last() else {
        return CycleMetrics::default();
    };
    let ci = spec.current_index;
    let (lo, hi) = states
        .iter()
        .map(|x| x[ci])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let i_peak = states.iter().map(|x| x[ci].abs()).fold(0.0, f64::max);
    let mut m = CycleMetrics {
        v_track_err: (end[spec.output_index] - spec.v_ref).abs(),
        i_pp: hi - lo,
        i_peak,
        ..CycleMetrics::default()
    };
    if let Some(layout) = &tl.layout {
        for (ev, x) in tl.events.iter().zip(states) {
            for t in &ev.transitions {
                let into = layout.into_node_current(t.leg, x.as_slice());
                let commutating = if t.rising { into } else { -into };
                let shortfall = (spec.i_min - commutating).max(0.0);
                m.zvs_events += 1;
                if shortfall == 0.0 {
                    m.zvs_satisfied += 1;
                }
                m.zvs_deficit += shortfall;
            }
        }
    }
    m
}

/// `S = 1 - logistic(k (j - m))`, written to stay accurate in both tails.
pub fn gate(j_pri: f64, spec: &CostSpec) -> f64 {
    let z = spec.gate_sharpness * (j_pri - spec.gate_midpoint);
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j: f64,
    pub j_pri: f64,
    pub gate: f64,
    pub ipp_term: f64,
    pub zvs_term: f64,
}

pub fn primary_cost(m: &CycleMetrics, spec: &CostSpec) -> f64 {
    m.v_track_err / spec.v_ref
}

/// Normalised secondary objectives `(i_pp, zvs)`.
pub fn secondary_costs(m: &CycleMetrics, spec: &CostSpec) -> (f64, f64) {
    let zvs = if m.zvs_events == 0 {
        0.0
    } else {
        m.zvs_deficit / (m.zvs_events as f64 * spec.i_min)
    };
    (m.i_pp / spec.ipp_norm, zvs)
}

pub fn cost_breakdown(m: &CycleMetrics, spec: &CostSpec) -> CostBreakdown {
    let j_pri = primary_cost(m, spec);
    let s = gate(j_pri, spec);
    let (ipp, zvs) = secondary_costs(m, spec);
    let ipp_term = spec.w_ipp * ipp;
    let zvs_term = spec.w_zvs * zvs;
    CostBreakdown {
        j: j_pri + s * (ipp_term + zvs_term),
        j_pri,
        gate: s,
        ipp_term,
        zvs_term,
    }
}

pub fn total_cost(m: &CycleMetrics, spec: &CostSpec) -> f64 {
    cost_breakdown(m, spec).j
}

/// The cost from already-normalised terms; handy for analysis and tests.
pub fn gated_sum(j_pri: f64, secondaries: &[(f64, f64)], spec: &CostSpec) -> f64 {
    j_pri + gate(j_pri, spec) * secondaries.iter().map(|(w, v)| w * v).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dab;
    use crate::modulation::{build_timeline, PhaseShiftCommand, TimelineEvent};
    use proptest::prelude::*;

    fn spec(mid: f64, k: f64) -> CostSpec {
        CostSpec {
            gate_midpoint: mid,
            gate_sharpness: k,
            ..CostSpec::default()
        }
    }

    fn bare_timeline(n: usize) -> SwitchTimeline {
        SwitchTimeline {
            period: 1.0,
            events: (0..n)
                .map(|i| TimelineEvent {
                    time: i as f64 / n as f64,
                    state: crate::SwitchState::all_off(8),
                    dead_legs: vec![],
                    transitions: vec![],
                })
                .collect(),
            layout: None,
        }
    }

    #[test]
    fn peak_to_peak_is_max_minus_min() {
        let states: Vec<DVector<f64>> = [-10.0, 4.0, 10.0, -4.0, 1.0]
            .iter()
            .map(|i| DVector::from_vec(vec![*i, 48.0, 24.0]))
            .collect();
        let m = extract_metrics(&states, &bare_timeline(4), &CostSpec::default());
        assert_eq!(m.i_pp, 20.0);
        assert_eq!(m.i_peak, 10.0);
        assert_eq!(m.v_track_err, 0.0);
    }

    #[test]
    fn zvs_with_margin_has_no_deficit() {
        let layout = dab::bridge_layout();
        let tl = build_timeline(&PhaseShiftCommand::tps(0.3, 0.2, 0.1), &layout, 1e-5, 0.0).unwrap();
        // Currents chosen per event so that every commanded edge commutates
        // with 5 A in the right direction.
        let states: Vec<DVector<f64>> = tl
            .events
            .iter()
            .map(|ev| {
                let t = ev.transitions[0];
                let sign = layout.legs[t.leg].current_sign * if t.rising { 1.0 } else { -1.0 };
                DVector::from_vec(vec![5.0 * sign, 48.0, 24.0])
            })
            .chain(std::iter::once(DVector::from_vec(vec![0.0, 48.0, 24.0])))
            .collect();
        let m = extract_metrics(&states, &tl, &CostSpec::default());
        assert_eq!(m.zvs_events, 8);
        assert_eq!(m.zvs_satisfied, 8);
        assert_eq!(m.zvs_deficit, 0.0);
        // Flip every current: each edge now misses by 2 + 5 A.
        let flipped: Vec<DVector<f64>> = states.iter().map(|x| DVector::from_vec(vec![-x[0], 48.0, 24.0])).collect();
        let m = extract_metrics(&flipped, &tl, &CostSpec::default());
        assert_eq!(m.zvs_satisfied, 0);
        assert!((m.zvs_deficit - 8.0 * 7.0).abs() < 1e-12);
    }

    #[test]
    fn gate_reference_values() {
        let s = spec(1.0, 10.0);
        assert_eq!(gate(1.0, &s), 0.5);
        let oracle = 1.0 - 1.0 / (1.0 + (10.0f64).exp());
        assert!((gate(0.0, &s) - oracle).abs() < 1e-15);
        assert!((gate(0.0, &s) - 0.99995).abs() < 1e-5);
        assert!(gate(1.0 + 10.0 / 10.0, &s) < 5e-5);
    }

    #[test]
    fn default_gate_separates_transient_from_steady_state() {
        let s = CostSpec::default();
        assert!(gate(8.0 / 24.0, &s) < 0.05);
        assert!(gate(0.2 / 24.0, &s) > 0.95);
    }

    #[test]
    fn zero_weights_reduce_to_primary() {
        let s = CostSpec {
            w_ipp: 0.0,
            w_zvs: 0.0,
            ..CostSpec::default()
        };
        let m = CycleMetrics {
            v_track_err: 0.3,
            i_pp: 100.0,
            zvs_deficit: 5.0,
            zvs_events: 8,
            ..CycleMetrics::default()
        };
        assert_eq!(total_cost(&m, &s), 0.3 / 24.0);
    }

    #[test]
    fn arithmetic_oracle() {
        // j_pri 0.1, normalised secondaries 2 and 1, weights 0.5 each.
        let s = spec(1.0, 10.0);
        let logistic = 1.0 / (1.0 + (-10.0f64 * (0.1 - 1.0)).exp());
        let expected = 0.1 + (1.0 - logistic) * (0.5 * 2.0 + 0.5 * 1.0);
        let got = gated_sum(0.1, &[(0.5, 2.0), (0.5, 1.0)], &s);
        assert!((got - expected).abs() < 1e-12);
        // Same through metrics.
        let spec2 = CostSpec {
            w_ipp: 0.5,
            w_zvs: 0.5,
            v_ref: 10.0,
            ipp_norm: 50.0,
            i_min: 2.0,
            ..s
        };
        let m = CycleMetrics {
            v_track_err: 1.0,
            i_pp: 100.0,
            zvs_deficit: 16.0,
            zvs_events: 8,
            ..CycleMetrics::default()
        };
        assert!((total_cost(&m, &spec2) - expected).abs() < 1e-12);
    }

    #[test]
    fn saturated_gate_suppresses_secondaries() {
        let s = spec(0.04, 100.0);
        let j_pri = 0.2;
        assert!(gate(j_pri, &s) < 1e-4);
        let sec = [(0.3, 2.0), (0.7, 1.5)];
        let total: f64 = sec.iter().map(|(w, v)| w * v).sum();
        assert!((gated_sum(j_pri, &sec, &s) - j_pri).abs() < 1e-4 * total);
    }

    #[test]
    fn heavy_secondaries_can_break_monotonicity() {
        // With sum w J_sec above 4/k the gate slope outruns the primary term.
        let s = spec(0.04, 100.0);
        let sec = [(1.0, 1.0)];
        assert!(gated_sum(0.05, &sec, &s) < gated_sum(0.03, &sec, &s));
    }

    proptest! {
        #[test]
        fn gate_bounds(j in 0.0f64..10.0, mid in -1.0f64..1.0, k in 0.1f64..50.0) {
            let s = spec(mid, k);
            let g = gate(j, &s);
            prop_assert!(g > 0.0 && g < 1.0);
            prop_assert!(gate(0.0, &s) > gate(1e3, &s));
        }

        #[test]
        fn gate_is_non_increasing(a in 0.0f64..2.0, b in 0.0f64..2.0, k in 0.1f64..500.0) {
            let s = spec(0.04, k);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(gate(hi, &s) <= gate(lo, &s));
        }

        #[test]
        fn cost_dominates_primary(
            err in 0.0f64..30.0, ipp in 0.0f64..500.0, zvs in 0.0f64..100.0,
            w1 in 0.0f64..5.0, w2 in 0.0f64..5.0,
        ) {
            let s = CostSpec { w_ipp: w1, w_zvs: w2, ..CostSpec::default() };
            let m = CycleMetrics { v_track_err: err, i_pp: ipp, zvs_deficit: zvs, zvs_events: 8, ..CycleMetrics::default() };
            prop_assert!(total_cost(&m, &s) >= primary_cost(&m, &s));
        }

        /// Monotone in j_pri whenever the weighted secondary sum W satisfies
        /// W k / 4 <= 1 (the gate's steepest slope is k/4).
        #[test]
        fn monotone_in_primary(
            a in 0.0f64..1.0, b in 0.0f64..1.0, k in 1.0f64..200.0,
            frac in 0.0f64..1.0, split in 0.0f64..1.0,
        ) {
            let s = spec(0.04, k);
            let w_total = frac * 4.0 / k;
            let sec = [(split, w_total), (1.0 - split, w_total)];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(gated_sum(hi, &sec, &s) >= gated_sum(lo, &sec, &s) - 1e-15);
        }
    }
}
