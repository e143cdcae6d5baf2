//! Integrators for piecewise-linear switched systems along a switching timeline.
//!
//! Every solver works on one switching period starting at `t = 0`, lands
//! exactly on each event time and hands the active switch state to the
//! model segment by segment.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::SwitchTimeline;
use crate::netlist::{Segment, SwitchedSystem};
use crate::SwitchState;

/// Smallest step the adaptive solver may take before giving up.
pub const MIN_STEP: f64 = 1e-18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Euler,
    Rk2,
    Rk4,
    AdaptiveReference,
    EventDriven,
}

impl SolverKind {
    pub fn is_fixed_step(self) -> bool {
        matches!(self, SolverKind::Euler | SolverKind::Rk2 | SolverKind::Rk4)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Rk2 => "rk2",
            SolverKind::Rk4 => "rk4",
            SolverKind::AdaptiveReference => "adaptive_reference",
            SolverKind::EventDriven => "event_driven",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "euler" | "ode1" => SolverKind::Euler,
            "rk2" | "ode2" => SolverKind::Rk2,
            "rk4" | "ode4" => SolverKind::Rk4,
            "adaptive_reference" | "dopri5" => SolverKind::AdaptiveReference,
            "event_driven" | "eds" => SolverKind::EventDriven,
            other => return Err(Error::InvalidArgument(format!("unknown solver kind '{other}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Step size in seconds for the fixed-step kinds.
    pub fixed_step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl SolverConfig {
    pub fn fixed(kind: SolverKind, step: f64) -> Self {
        SolverConfig {
            kind,
            fixed_step: step,
            ..Self::default()
        }
    }

    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        SolverConfig {
            kind: SolverKind::AdaptiveReference,
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn event_driven() -> Self {
        SolverConfig {
            kind: SolverKind::EventDriven,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_fixed_step() && !(self.fixed_step > 0.0 && self.fixed_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fixed step must be positive, got {}",
                self.fixed_step
            )));
        }
        if self.kind == SolverKind::AdaptiveReference && !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Rk4,
            fixed_step: 50e-9,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    /// Accepted steps, event splits included.
    pub steps: usize,
    /// Rejected trial steps (adaptive solver only).
    pub rejected: usize,
    /// Evaluation points on the nominal grid: `ceil(T/h)` for fixed-step
    /// kinds, one per segment for the event-driven solver, accepted steps for
    /// the adaptive one.
    pub points: usize,
}

/// Sampled solution. `switch_states[k]` is the state active on `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub switch_states: Vec<SwitchState>,
    /// Positions in `times` of the switching instants, including the start.
    pub events_index: Vec<usize>,
    pub stats: SolverStats,
}

impl Trajectory {
    fn start(x0: &DVector<f64>) -> Self {
        Trajectory {
            times: vec![0.0],
            states: vec![x0.clone()],
            switch_states: Vec::new(),
            events_index: Vec::new(),
            stats: SolverStats::default(),
        }
    }

    fn push(&mut self, t: f64, x: DVector<f64>, s: &SwitchState) {
        self.switch_states.push(s.clone());
        self.times.push(t);
        self.states.push(x);
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories are never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories are never empty")
    }

    /// States at the start of every segment followed by the end state.
    pub fn event_states(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<_> = self.events_index.iter().map(|&i| self.states[i].clone()).collect();
        out.push(self.final_state().clone());
        out
    }

    /// Append `other`, shifting its times so it starts where `self` ends.
    pub fn append(&mut self, other: &Trajectory) {
        let offset = self.final_time();
        let base = self.times.len() - 1;
        self.events_index.extend(other.events_index.iter().map(|i| i + base));
        self.times.extend(other.times[1..].iter().map(|t| t + offset));
        self.states.extend(other.states[1..].iter().cloned());
        self.switch_states.extend(other.switch_states.iter().cloned());
        self.stats.steps += other.stats.steps;
        self.stats.rejected += other.stats.rejected;
        self.stats.points += other.stats.points;
    }

    /// CSV with header `t,<labels>,state_bits`; the bits column holds the
    /// state entered at that sample (the last row repeats the final state).
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("t");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push_str(",state_bits\n");
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let _ = write!(out, "{t:?}");
            for v in x.iter() {
                let _ = write!(out, ",{v:?}");
            }
            let s = self
                .switch_states
                .get(k)
                .or_else(|| self.switch_states.last())
                .map(|s| s.to_string())
                .unwrap_or_default();
            let _ = writeln!(out, ",{s}");
        }
        out
    }
}

/// One forward-Euler step of `dx/dt = A x + B u`.
pub fn step_euler(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    x + (a * x + b * u) * h
}

fn rhs(seg: &Segment, x: &DVector<f64>) -> DVector<f64> {
    &seg.a * x + &seg.f
}

fn fixed_step(kind: SolverKind, seg: &Segment, x: &DVector<f64>, h: f64) -> DVector<f64> {
    match kind {
        SolverKind::Euler => x + rhs(seg, x) * h,
        SolverKind::Rk2 => {
            let k1 = rhs(seg, x);
            let k2 = rhs(seg, &(x + &k1 * h));
            x + (k1 + k2) * (0.5 * h)
        }
        _ => {
            let k1 = rhs(seg, x);
            let k2 = rhs(seg, &(x + &k1 * (0.5 * h)));
            let k3 = rhs(seg, &(x + &k2 * (0.5 * h)));
            let k4 = rhs(seg, &(x + &k3 * h));
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        }
    }
}

fn check_input(sys: &dyn SwitchedSystem, tl: &SwitchTimeline, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != sys.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries, model has {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    if tl.events.is_empty() || !(tl.period > 0.0) {
        return Err(Error::InvalidArgument("timeline has no events".into()));
    }
    Ok(())
}

fn finite_or_err(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { time: t })
    }
}

fn segment_end(tl: &SwitchTimeline, i: usize) -> f64 {
    tl.events.get(i + 1).map_or(tl.period, |e| e.time)
}

/// Number of nominal grid points in one period for step `h`.
pub fn grid_points(period: f64, h: f64) -> usize {
    let n = period / h;
    // Guard against 200.00000000000003 style ratios.
    (n - 1e-9 * n.max(1.0)).ceil().max(1.0) as usize
}

/// Fixed-step integration over one period (Euler, Heun, classic RK4).
///
/// The nominal grid is `k h`; a step that would cross an event is split at
/// the event so that every event time appears exactly in the output.
pub fn integrate_fixed(
    sys: &dyn SwitchedSystem,
    tl: &SwitchTimeline,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !cfg.kind.is_fixed_step() {
        return Err(Error::InvalidArgument(format!("{} is not a fixed-step solver", cfg.kind.name())));
    }
    check_input(sys, tl, x0)?;
    let h = cfg.fixed_step;
    let n_grid = grid_points(tl.period, h);
    let tol = 1e-12 * tl.period;
    let mut traj = Trajectory::start(x0);
    traj.stats.points = n_grid;
    let mut x = x0.clone();
    let mut k = 1usize;
    for i in 0..tl.events.len() {
        let state = tl.resolved_state(i, x.as_slice());
        let seg = sys.segment(&state)?;
        traj.events_index.push(traj.times.len() - 1);
        let end = segment_end(tl, i);
        let mut t = tl.events[i].time;
        while t < end {
            while k < n_grid && (k as f64) * h <= t + tol {
                k += 1;
            }
            let grid = if k < n_grid { (k as f64) * h } else { tl.period };
            let next = if grid >= end - tol { end } else { grid };
            x = fixed_step(cfg.kind, seg, &x, next - t);
            finite_or_err(&x, next)?;
            traj.stats.steps += 1;
            traj.push(next, x.clone(), &state);
            t = next;
        }
    }
    Ok(traj)
}

// Dormand-Prince 5(4) tableau. Segments are autonomous, so the nodes c_i
// are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;

/// One Dormand-Prince trial step: (x_new, scaled error norm).
fn dopri_step(seg: &Segment, x: &DVector<f64>, h: f64, cfg: &SolverConfig) -> (DVector<f64>, f64) {
    let k1 = rhs(seg, x);
    let k2 = rhs(seg, &(x + &k1 * (h * A21)));
    let k3 = rhs(seg, &(x + (&k1 * A31 + &k2 * A32) * h));
    let k4 = rhs(seg, &(x + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = rhs(seg, &(x + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
    let k6 = rhs(seg, &(x + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
    let x_new = x + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
    let k7 = rhs(seg, &x_new);
    let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    let mut sum = 0.0;
    for i in 0..x.len() {
        let sc = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(x_new[i].abs());
        sum += (err[i] / sc).powi(2);
    }
    let norm = (sum / x.len().max(1) as f64).sqrt();
    (x_new, norm)
}

fn initial_step(seg: &Segment, x: &DVector<f64>, cfg: &SolverConfig, span: f64) -> f64 {
    let f0 = rhs(seg, x);
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..x.len() {
        let sc = cfg.abs_tol + cfg.rel_tol * x[i].abs();
        d0 += (x[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6 * span
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    h.min(span)
}

/// Embedded 5(4) Dormand-Prince integration with PI step-size control.
pub fn integrate_adaptive_reference(
    sys: &dyn SwitchedSystem,
    tl: &SwitchTimeline,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let cfg = SolverConfig {
        kind: SolverKind::AdaptiveReference,
        ..*cfg
    };
    cfg.validate()?;
    check_input(sys, tl, x0)?;
    let mut traj = Trajectory::start(x0);
    let mut x = x0.clone();
    let mut h_next: Option<f64> = None;
    let mut err_prev: f64 = 1e-4;
    for i in 0..tl.events.len() {
        let state = tl.resolved_state(i, x.as_slice());
        let seg = sys.segment(&state)?;
        traj.events_index.push(traj.times.len() - 1);
        let end = segment_end(tl, i);
        let mut t = tl.events[i].time;
        let mut h = h_next.unwrap_or_else(|| initial_step(seg, &x, &cfg, end - t));
        while t < end {
            let remaining = end - t;
            let clipped = h >= remaining * (1.0 - 1e-12);
            let step = if clipped { remaining } else { h };
            if step < MIN_STEP {
                return Err(Error::StepUnderflow { time: t });
            }
            let (x_new, err) = dopri_step(seg, &x, step, &cfg);
            if !err.is_finite() {
                traj.stats.rejected += 1;
                h = step * MIN_FACTOR;
                continue;
            }
            if err <= 1.0 {
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                err_prev = err.max(1e-4);
                let t_new = if clipped { end } else { t + step };
                finite_or_err(&x_new, t_new)?;
                x = x_new;
                t = t_new;
                traj.stats.steps += 1;
                traj.push(t, x.clone(), &state);
                // A clipped step says nothing about the natural step length.
                h = if clipped { h.max(step * factor) } else { step * factor };
            } else {
                traj.stats.rejected += 1;
                h = step * (SAFETY * err.powf(-ALPHA)).clamp(MIN_FACTOR, 1.0);
            }
        }
        h_next = Some(h);
    }
    traj.stats.points = traj.stats.steps;
    Ok(traj)
}

/// Exact propagator of `dx/dt = A x + f` over `dt`: `(Phi, Gamma)` with
/// `x(dt) = Phi x + Gamma`.
///
/// Uses the exponential of the augmented matrix `[[A, f], [0, 0]] dt`,
/// which stays valid when `A` is singular.
pub fn segment_propagator(seg: &Segment, dt: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = seg.a.nrows();
    if seg.a.iter().all(|v| *v == 0.0) {
        return Ok((DMatrix::identity(m, m), &seg.f * dt));
    }
    let mut aug = DMatrix::zeros(m + 1, m + 1);
    aug.view_mut((0, 0), (m, m)).copy_from(&(&seg.a * dt));
    aug.view_mut((0, m), (m, 1)).copy_from(&(&seg.f * dt));
    let e = aug.exp();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::SeriesDivergence);
    }
    let phi = e.view((0, 0), (m, m)).into_owned();
    let gamma = e.view((0, m), (m, 1)).column(0).into_owned();
    Ok((phi, gamma))
}

/// Exact segment-by-segment propagation: one evaluation per event.
pub fn integrate_event_driven(
    sys: &dyn SwitchedSystem,
    tl: &SwitchTimeline,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    check_input(sys, tl, x0)?;
    let mut traj = Trajectory::start(x0);
    let mut x = x0.clone();
    for i in 0..tl.events.len() {
        let state = tl.resolved_state(i, x.as_slice());
        let seg = sys.segment(&state)?;
        traj.events_index.push(traj.times.len() - 1);
        let end = segment_end(tl, i);
        let dt = end - tl.events[i].time;
        if dt <= 0.0 {
            continue;
        }
        x = if seg.a.iter().all(|v| *v == 0.0) {
            &x + &seg.f * dt
        } else {
            let (phi, gamma) = segment_propagator(seg, dt)?;
            phi * &x + gamma
        };
        finite_or_err(&x, end)?;
        traj.stats.steps += 1;
        traj.push(end, x.clone(), &state);
    }
    traj.stats.points = traj.stats.steps;
    Ok(traj)
}

/// Dispatch on `cfg.kind` for one period.
pub fn integrate(
    sys: &dyn SwitchedSystem,
    tl: &SwitchTimeline,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    match cfg.kind {
        SolverKind::Euler | SolverKind::Rk2 | SolverKind::Rk4 => integrate_fixed(sys, tl, x0, cfg),
        SolverKind::AdaptiveReference => integrate_adaptive_reference(sys, tl, x0, cfg),
        SolverKind::EventDriven => integrate_event_driven(sys, tl, x0),
    }
}

/// `cycles` consecutive periods of the same timeline.
pub fn integrate_cycles(
    sys: &dyn SwitchedSystem,
    tl: &SwitchTimeline,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
    cycles: usize,
) -> Result<Trajectory> {
    let mut traj = integrate(sys, tl, x0, cfg)?;
    for _ in 1..cycles {
        let next = integrate(sys, tl, traj.final_state(), cfg)?;
        traj.append(&next);
    }
    Ok(traj)
}

/// End state of one period with the exact solver; the workhorse for plants.
pub fn cycle_end_state(sys: &dyn SwitchedSystem, tl: &SwitchTimeline, x0: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(integrate_event_driven(sys, tl, x0)?.final_state().clone())
}
