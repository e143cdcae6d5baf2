//! Phase-shift modulation of a two-bridge converter.
//!
//! Edge convention, in fractions of the switching period `T`:
//!
//! * leg A (primary) goes high at 0;
//! * leg B is the complement of A delayed by `d1/2`;
//! * leg C (secondary) goes high at `(d0 + d1)/2`, i.e. `d0/2` after leg B;
//! * leg D is the complement of C delayed by `d2/2`.
//!
//! Every leg is high for exactly half a period, so the switching pattern has
//! half-wave symmetry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::switch_state::SwitchState;

/// Events closer than this fraction of the period are merged.
pub const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Sps,
    Dps,
    Tps,
}

impl Scheme {
    /// Number of free phase-shift ratios.
    pub fn dim(self) -> usize {
        match self {
            Scheme::Sps => 1,
            Scheme::Dps => 2,
            Scheme::Tps => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sps => "SPS",
            Scheme::Dps => "DPS",
            Scheme::Tps => "TPS",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SPS" => Ok(Scheme::Sps),
            "DPS" => Ok(Scheme::Dps),
            "TPS" => Ok(Scheme::Tps),
            _ => Err(Error::InvalidArgument(format!("unknown modulation scheme '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftCommand {
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub scheme: Scheme,
}

impl PhaseShiftCommand {
    pub fn new(d0: f64, d1: f64, d2: f64, scheme: Scheme) -> Self {
        PhaseShiftCommand { d0, d1, d2, scheme }
    }

    pub fn tps(d0: f64, d1: f64, d2: f64) -> Self {
        Self::new(d0, d1, d2, Scheme::Tps)
    }

    pub fn sps(d0: f64) -> Self {
        Self::new(d0, 0.0, 0.0, Scheme::Sps)
    }

    /// Builds a command from the optimiser's decision vector.
    pub fn from_vector(scheme: Scheme, u: &[f64]) -> Result<Self> {
        if u.len() != scheme.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} components, got {}",
                scheme.name(),
                scheme.dim(),
                u.len()
            )));
        }
        Ok(match scheme {
            Scheme::Sps => Self::sps(u[0]),
            Scheme::Dps => Self::new(u[0], u[1], u[1], Scheme::Dps),
            Scheme::Tps => Self::tps(u[0], u[1], u[2]),
        })
    }

    /// The free components seen by the optimiser.
    pub fn to_vector(&self) -> Vec<f64> {
        match self.scheme {
            Scheme::Sps => vec![self.d0],
            Scheme::Dps => vec![self.d0, self.d1],
            Scheme::Tps => vec![self.d0, self.d1, self.d2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (component, value) in [("d0", self.d0), ("d1", self.d1), ("d2", self.d2)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::CommandOutOfRange { component, value });
            }
        }
        Ok(())
    }
}

/// Projects a command onto the constraint set of `scheme`.
pub fn coerce_to_scheme(cmd: PhaseShiftCommand, scheme: Scheme) -> PhaseShiftCommand {
    match scheme {
        Scheme::Sps => PhaseShiftCommand::new(cmd.d0, 0.0, 0.0, scheme),
        Scheme::Dps => {
            let mean = if cmd.scheme == Scheme::Dps {
                cmd.d1
            } else {
                0.5 * (cmd.d1 + cmd.d2)
            };
            PhaseShiftCommand::new(cmd.d0, mean, mean, scheme)
        }
        Scheme::Tps => PhaseShiftCommand::new(cmd.d0, cmd.d1, cmd.d2, scheme),
    }
}

/// One half-bridge leg: indices of its two switches and the sign mapping the
/// tracked inductor current onto the current flowing into the leg midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub name: String,
    pub upper: usize,
    pub lower: usize,
    pub current_sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeLayout {
    /// Legs in the order A, B (primary), C, D (secondary).
    pub legs: Vec<Leg>,
    pub switch_count: usize,
    /// State index of the commutating inductor current.
    pub current_index: usize,
}

impl BridgeLayout {
    /// Current flowing into the midpoint of `leg` for state vector `x`.
    pub fn into_node_current(&self, leg: usize, x: &[f64]) -> f64 {
        self.legs[leg].current_sign * x[self.current_index]
    }

    /// All combinations of leg levels (upper xor lower on): the modulator-reachable states.
    pub fn conduction_states(&self) -> Vec<SwitchState> {
        let n = self.legs.len();
        (0..1u64 << n)
            .map(|mask| {
                let mut s = SwitchState::all_off(self.switch_count);
                for (i, leg) in self.legs.iter().enumerate() {
                    let high = mask >> i & 1 == 1;
                    s.set(leg.upper, high);
                    s.set(leg.lower, !high);
                }
                s
            })
            .collect()
    }

    /// Level of every leg in state `s`: `Some(true)` high, `Some(false)` low, `None` both off.
    pub fn leg_levels(&self, s: &SwitchState) -> Vec<Option<bool>> {
        self.legs
            .iter()
            .map(|leg| match (s.get(leg.upper), s.get(leg.lower)) {
                (true, false) => Some(true),
                (false, true) => Some(false),
                _ => None,
            })
            .collect()
    }
}

/// A commanded leg commutation: `rising` means the upper switch is turned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegTransition {
    pub leg: usize,
    pub rising: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    #[serde(rename = "t")]
    pub time: f64,
    pub state: SwitchState,
    /// Legs in dead time during this segment; their switch pair is resolved
    /// from the current direction when the segment starts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dead_legs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<LegTransition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchTimeline {
    pub period: f64,
    pub events: Vec<TimelineEvent>,
    #[serde(skip)]
    pub layout: Option<BridgeLayout>,
}

impl SwitchTimeline {
    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// Duration of the segment that starts at event `i`.
    pub fn segment_duration(&self, i: usize) -> f64 {
        let end = self.events.get(i + 1).map_or(self.period, |e| e.time);
        end - self.events[i].time
    }

    /// Switch state for the segment starting at event `i`, with dead-time legs
    /// resolved to the conducting diode for the current in `x`.
    pub fn resolved_state(&self, i: usize, x: &[f64]) -> SwitchState {
        let ev = &self.events[i];
        if ev.dead_legs.is_empty() {
            return ev.state.clone();
        }
        let layout = self
            .layout
            .as_ref()
            .expect("dead-time timelines always carry a bridge layout");
        let mut s = ev.state.clone();
        for &leg in &ev.dead_legs {
            let upper = layout.into_node_current(leg, x) > 0.0;
            s.set(layout.legs[leg].upper, upper);
            s.set(layout.legs[leg].lower, !upper);
        }
        s
    }

    pub fn transition_count(&self) -> usize {
        self.events.iter().map(|e| e.transitions.len()).sum()
    }
}

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if 1.0 - r < MERGE_TOLERANCE {
        0.0
    } else {
        r
    }
}

/// Rising-edge positions of legs A..D as fractions of the period.
pub fn rising_edges(cmd: &PhaseShiftCommand) -> [f64; 4] {
    let c = wrap(0.5 * (cmd.d0 + cmd.d1));
    [0.0, wrap(0.5 + 0.5 * cmd.d1), c, wrap(c + 0.5 + 0.5 * cmd.d2)]
}

pub fn build_timeline(
    cmd: &PhaseShiftCommand,
    layout: &BridgeLayout,
    period: f64,
    dead_time: f64,
) -> Result<SwitchTimeline> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    if !(0.0..period / 8.0).contains(&dead_time) {
        return Err(Error::InvalidArgument(format!(
            "dead time {dead_time} outside [0, period/8)"
        )));
    }
    if layout.legs.len() != 4 {
        return Err(Error::InvalidArgument("phase-shift modulation needs four legs".into()));
    }
    cmd.validate()?;
    let cmd = coerce_to_scheme(*cmd, cmd.scheme);
    let rises = rising_edges(&cmd);
    let dt = dead_time / period;

    // (fraction, optional commanded transition)
    let mut marks: Vec<(f64, Option<LegTransition>)> = Vec::new();
    for (leg, r) in rises.iter().enumerate() {
        for (edge, rising) in [(*r, true), (wrap(r + 0.5), false)] {
            marks.push((edge, Some(LegTransition { leg, rising })));
            if dt > 0.0 {
                marks.push((wrap(edge + dt), None));
            }
        }
    }
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut fracs: Vec<f64> = Vec::new();
    let mut transitions: Vec<Vec<LegTransition>> = Vec::new();
    for (f, tr) in marks {
        match fracs.last() {
            Some(last) if f - last < MERGE_TOLERANCE => {}
            _ => {
                fracs.push(f);
                transitions.push(Vec::new());
            }
        }
        if let Some(t) = tr {
            transitions.last_mut().expect("pushed above").push(t);
        }
    }
    // Marks just below 1.0 belong to the event at 0.
    while fracs.len() > 1 && 1.0 - fracs[fracs.len() - 1] < MERGE_TOLERANCE {
        fracs.pop();
        let tr = transitions.pop().expect("parallel vectors");
        transitions[0].extend(tr);
    }
    if fracs[0] != 0.0 {
        fracs.insert(0, 0.0);
        transitions.insert(0, Vec::new());
    }

    let mut events = Vec::with_capacity(fracs.len());
    for (i, f) in fracs.iter().enumerate() {
        let next = fracs.get(i + 1).copied().unwrap_or(1.0);
        let mid = 0.5 * (f + next);
        let mut state = SwitchState::all_off(layout.switch_count);
        let mut dead_legs = Vec::new();
        for (leg_idx, (leg, r)) in layout.legs.iter().zip(rises.iter()).enumerate() {
            let q = (mid - r).rem_euclid(1.0);
            let in_dead = dt > 0.0 && (q < dt || (q >= 0.5 && q - 0.5 < dt));
            if in_dead {
                dead_legs.push(leg_idx);
            } else {
                let high = q < 0.5;
                state.set(leg.upper, high);
                state.set(leg.lower, !high);
            }
        }
        events.push(TimelineEvent {
            time: f * period,
            state,
            dead_legs,
            transitions: transitions[i].clone(),
        });
    }

    Ok(SwitchTimeline {
        period,
        events,
        layout: Some(layout.clone()),
    })
}
