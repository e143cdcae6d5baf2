//! Closed-loop simulation: an exact switched plant, a PI baseline and the
//! predictive controller driven by load and reference schedules.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dab::{self, DabParams, ModelBank};
use crate::error::{Error, Result};
use crate::modulation::{build_timeline, BridgeLayout, PhaseShiftCommand, Scheme, SwitchTimeline};
use crate::netlist::SwitchedSystem;
use crate::objectives::{cost_breakdown, extract_metrics, total_cost, CostBreakdown, CostSpec, CycleMetrics};
use crate::optimizer::{optimize_sso, OptimizeBudget, SsoConfig, Trace};
use crate::solver::{integrate_event_driven, Trajectory};
use crate::surrogate::NspBank;

/// Piecewise-constant value over cycles: `(first_cycle, value)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule { steps: vec![(0, v)] }
    }

    pub fn step(before: f64, at: usize, after: f64) -> Self {
        Schedule {
            steps: vec![(0, before), (at, after)],
        }
    }

    pub fn at(&self, cycle: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(c, _)| *c <= cycle)
            .last()
            .map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let starts_at_zero = self.steps.first().is_some_and(|(c, _)| *c == 0);
        let ordered = self.steps.windows(2).all(|w| w[0].0 < w[1].0);
        let positive = self.steps.iter().all(|(_, v)| v.is_finite() && *v > 0.0);
        if starts_at_zero && ordered && positive {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{name} schedule must start at cycle 0, be strictly ordered and positive"
            )))
        }
    }

    fn change_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().skip(1).map(|(c, _)| *c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration_cycles: usize,
    pub v_ref: Schedule,
    pub load: Schedule,
    pub initial_state: Vec<f64>,
    /// Command applied before the run (the operating point of `initial_state`).
    pub initial_command: PhaseShiftCommand,
}

impl Scenario {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        self.v_ref.validate("v_ref")?;
        self.load.validate("load")?;
        if self.initial_state.len() != state_dim {
            return Err(Error::Config(format!(
                "scenario {}: initial state has {} entries, expected {state_dim}",
                self.name,
                self.initial_state.len()
            )));
        }
        self.initial_command.validate()
    }

    /// First cycle at which either schedule changes.
    pub fn step_cycle(&self) -> Option<usize> {
        self.v_ref.change_points().chain(self.load.change_points()).min()
    }

    pub fn loads(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.load.steps.iter().map(|(_, r)| *r).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// The two standard transients: a load drop at the rated voltage and a
/// reference step at a fixed resistive load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSet {
    pub duration_cycles: usize,
    pub step_cycle: usize,
    pub load_step_from: f64,
    pub load_step_to: f64,
    pub voltage_step_load: f64,
    pub voltage_step_from: f64,
    pub voltage_step_to: f64,
}

impl Default for ScenarioSet {
    fn default() -> Self {
        ScenarioSet {
            duration_cycles: 80,
            step_cycle: 10,
            load_step_from: 1.0,
            load_step_to: 0.1,
            voltage_step_load: 0.3,
            voltage_step_from: 16.0,
            voltage_step_to: 32.0,
        }
    }
}

impl ScenarioSet {
    /// Load fractions the predictor has to cover.
    pub fn load_fractions(&self) -> Vec<f64> {
        let mut v = vec![self.load_step_from, self.load_step_to, self.voltage_step_load];
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Both scenarios, each starting from the periodic steady state of its
    /// initial operating point under SPS.
    pub fn build(&self, params: &DabParams, dead_time: f64) -> Result<Vec<Scenario>> {
        let layout = dab::bridge_layout();
        let period = params.period();
        let mut out = Vec::new();

        let r0 = params.load_resistance(self.load_step_from);
        let r1 = params.load_resistance(self.load_step_to);
        let model = dab::compile_model(params, r0)?;
        let (d0, x0) = sps_operating_point(&model, &layout, period, dead_time, params.rated_voltage)?;
        out.push(Scenario {
            name: "load_step".into(),
            duration_cycles: self.duration_cycles,
            v_ref: Schedule::constant(params.rated_voltage),
            load: Schedule::step(r0, self.step_cycle, r1),
            initial_state: x0.as_slice().to_vec(),
            initial_command: PhaseShiftCommand::sps(d0),
        });

        let r = params.load_resistance(self.voltage_step_load);
        let model = dab::compile_model(params, r)?;
        let (d0, x0) = sps_operating_point(&model, &layout, period, dead_time, self.voltage_step_from)?;
        out.push(Scenario {
            name: "voltage_step".into(),
            duration_cycles: self.duration_cycles,
            v_ref: Schedule::step(self.voltage_step_from, self.step_cycle, self.voltage_step_to),
            load: Schedule::constant(r),
            initial_state: x0.as_slice().to_vec(),
            initial_command: PhaseShiftCommand::sps(d0),
        });
        Ok(out)
    }
}

/// Ground truth: the exact piecewise-linear solver on the compiled netlist.
#[derive(Clone, Debug)]
pub struct Plant {
    pub models: ModelBank,
    pub layout: BridgeLayout,
    pub period: f64,
    pub dead_time: f64,
}

impl Plant {
    pub fn new(params: &DabParams, loads: &[f64], dead_time: f64) -> Result<Self> {
        Ok(Plant {
            models: ModelBank::new(params, loads)?,
            layout: dab::bridge_layout(),
            period: params.period(),
            dead_time,
        })
    }

    pub fn timeline(&self, cmd: &PhaseShiftCommand) -> Result<SwitchTimeline> {
        build_timeline(cmd, &self.layout, self.period, self.dead_time)
    }

    /// One switching period at the given load.
    pub fn advance(&self, x: &DVector<f64>, cmd: &PhaseShiftCommand, load_ohms: f64) -> Result<(Trajectory, SwitchTimeline)> {
        let model = self.models.get(load_ohms)?;
        let tl = self.timeline(cmd)?;
        Ok((plant_advance(model.as_ref(), x, &tl)?, tl))
    }
}

/// One full period through the event-driven solver.
pub fn plant_advance(sys: &dyn SwitchedSystem, x: &DVector<f64>, tl: &SwitchTimeline) -> Result<Trajectory> {
    integrate_event_driven(sys, tl, x)
}

fn cycle_map(sys: &dyn SwitchedSystem, tl: &SwitchTimeline, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(integrate_event_driven(sys, tl, x)?.final_state().clone())
}

/// Periodic steady state of a fixed timeline.
///
/// The cycle map is affine for a fixed switching sequence, so one Newton step
/// from any point lands on the fixed point; a few more absorb dead-time
/// resolution changes.
pub fn periodic_steady_state(sys: &dyn SwitchedSystem, tl: &SwitchTimeline, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let m = sys.state_dim();
    let mut x = guess.clone();
    for _ in 0..20 {
        let fx = cycle_map(sys, tl, &x)?;
        let r = &fx - &x;
        let scale = 1.0 + x.amax();
        if r.amax() <= 1e-11 * scale {
            return Ok(x);
        }
        let mut jac = DMatrix::identity(m, m);
        for i in 0..m {
            let mut xp = x.clone();
            xp[i] += 1.0;
            let col = cycle_map(sys, tl, &xp)? - &fx;
            for k in 0..m {
                jac[(k, i)] -= col[k];
            }
        }
        let dx = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularSwitchState("cycle map has a unit eigenvalue".into()))?;
        x += dx;
    }
    let fx = cycle_map(sys, tl, &x)?;
    if (&fx - &x).amax() <= 1e-8 * (1.0 + x.amax()) {
        Ok(x)
    } else {
        Err(Error::NonFinite { time: tl.period })
    }
}

/// SPS phase shift whose periodic steady state puts the output at `v_target`,
/// found by bisection on `d0` over `[0, 0.5]` where transferred power rises
/// monotonically.
pub fn sps_operating_point(
    sys: &dyn SwitchedSystem,
    layout: &BridgeLayout,
    period: f64,
    dead_time: f64,
    v_target: f64,
) -> Result<(f64, DVector<f64>)> {
    let m = sys.state_dim();
    let solve = |d0: f64, guess: &DVector<f64>| -> Result<DVector<f64>> {
        let tl = build_timeline(&PhaseShiftCommand::sps(d0), layout, period, dead_time)?;
        periodic_steady_state(sys, &tl, guess)
    };
    let mut guess = DVector::zeros(m);
    let (mut lo, mut hi) = (0.0, 0.5);
    let top = solve(hi, &guess)?;
    if top[dab::V_C2] < v_target {
        return Err(Error::InvalidArgument(format!(
            "output {v_target} V is above the SPS maximum {:.3} V at this load",
            top[dab::V_C2]
        )));
    }
    guess = top;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let x = solve(mid, &guess)?;
        if x[dab::V_C2] < v_target {
            lo = mid;
        } else {
            hi = mid;
        }
        guess = x;
        if hi - lo < 1e-13 {
            break;
        }
    }
    let d0 = 0.5 * (lo + hi);
    let x = solve(d0, &guess)?;
    Ok((d0, x))
}

/// What a controller sees at a cycle boundary.
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    pub cycle: usize,
    pub x: &'a DVector<f64>,
    pub v_ref: f64,
    /// Load resistance in force during the previous cycle.
    pub load_estimate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub command: PhaseShiftCommand,
    /// Predicted cycles evaluated to reach the decision.
    pub evals: usize,
}

pub trait Controller {
    fn name(&self) -> &str;
    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiConfig {
    /// Proportional gain in phase-shift units per volt.
    pub kp: f64,
    /// Integral gain per volt-second.
    pub ki: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for PiConfig {
    /// Internal-model tuning on the SPS plant at rated load and voltage with a
    /// closed-loop time constant of 8 periods (`tune_pi_imc(.., 24.0, 0.01, 8.0)`).
    fn default() -> Self {
        PiConfig {
            kp: 0.031_471,
            ki: 245.16,
            d_min: 0.0,
            d_max: 1.0,
        }
    }
}

/// Positional PI on the output voltage driving the SPS phase shift.
#[derive(Clone, Debug, PartialEq)]
pub struct PiController {
    pub cfg: PiConfig,
    /// Sampling period in seconds.
    pub period: f64,
    /// Accumulated error in volt-seconds.
    pub integral: f64,
    pub last_output: f64,
}

impl PiController {
    pub fn new(cfg: PiConfig, period: f64) -> Self {
        PiController {
            cfg,
            period,
            integral: 0.0,
            last_output: 0.0,
        }
    }

    /// Starts with the integrator holding `d0` so that a zero error keeps it.
    pub fn bumpless(cfg: PiConfig, period: f64, d0: f64) -> Self {
        PiController {
            cfg,
            period,
            integral: d0 / cfg.ki,
            last_output: d0,
        }
    }

    /// Clamping anti-windup: the integrator is frozen whenever the updated
    /// output saturates.
    pub fn pi_step(&mut self, v_meas: f64, v_ref: f64, period: f64) -> PhaseShiftCommand {
        let e = v_ref - v_meas;
        let c = self.cfg;
        let trial = self.integral + e * period;
        let raw = c.kp * e + c.ki * trial;
        if (c.d_min..=c.d_max).contains(&raw) {
            self.integral = trial;
        }
        let out = raw.clamp(c.d_min, c.d_max);
        self.last_output = out;
        PhaseShiftCommand::sps(out)
    }
}

impl Controller for PiController {
    fn name(&self) -> &str {
        "pi"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision> {
        Ok(Decision {
            command: self.pi_step(obs.x[dab::V_C2], obs.v_ref, self.period),
            evals: 0,
        })
    }
}

/// First-order fit of the SPS output response and the matching PI gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiTuning {
    pub d0: f64,
    /// Static gain in volts per unit phase shift.
    pub gain: f64,
    /// Time to 63.2% of the step response, seconds.
    pub time_constant: f64,
    pub kp: f64,
    pub ki: f64,
}

/// Internal-model PI tuning: step `d0` by `delta` from the steady state,
/// fit gain and time constant, and place the closed-loop pole at
/// `closed_loop_cycles` periods (`kp = tau / (K lambda)`, `ki = 1 / (K lambda)`).
pub fn tune_pi_imc(
    sys: &dyn SwitchedSystem,
    layout: &BridgeLayout,
    period: f64,
    v_target: f64,
    delta: f64,
    closed_loop_cycles: f64,
) -> Result<PiTuning> {
    let (d0, x0) = sps_operating_point(sys, layout, period, 0.0, v_target)?;
    let tl = build_timeline(&PhaseShiftCommand::sps(d0 + delta), layout, period, 0.0)?;
    let x_final = periodic_steady_state(sys, &tl, &x0)?;
    let dv = x_final[dab::V_C2] - x0[dab::V_C2];
    let gain = dv / delta;
    let target = x0[dab::V_C2] + (1.0 - (-1.0f64).exp()) * dv;
    let mut x = x0.clone();
    let mut cycles = 0usize;
    let mut prev = x[dab::V_C2];
    let time_constant = loop {
        x = cycle_map(sys, &tl, &x)?;
        cycles += 1;
        let v = x[dab::V_C2];
        if (v - target) * dv.signum() >= 0.0 {
            // Linear interpolation inside the crossing cycle.
            let frac = (target - prev) / (v - prev);
            break (cycles as f64 - 1.0 + frac) * period;
        }
        if cycles > 100_000 {
            return Err(Error::NonFinite { time: cycles as f64 * period });
        }
        prev = v;
    };
    let lambda = closed_loop_cycles * period;
    Ok(PiTuning {
        d0,
        gain,
        time_constant,
        kp: time_constant / (gain * lambda),
        ki: 1.0 / (gain * lambda),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub scheme: Scheme,
    /// Simplex iterations per control cycle.
    pub iterations: usize,
    pub sso: SsoConfig,
    pub cost: CostSpec,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            scheme: Scheme::Tps,
            iterations: 9,
            sso: SsoConfig::default(),
            cost: CostSpec::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("mpc iterations must be >= 1".into()));
        }
        self.sso.validate()?;
        self.cost.validate()
    }
}

/// Predictive controller: warm-started simplex search over one predicted
/// cycle of the learned predictor.
#[derive(Clone, Debug)]
pub struct DtMpcController {
    pub cfg: MpcConfig,
    pub models: ModelBank,
    pub nsp: NspBank,
    pub layout: BridgeLayout,
    pub period: f64,
    pub dead_time: f64,
    /// Warm start for the next search.
    pub previous_best: Vec<f64>,
    pub last_trace: Trace,
}

impl DtMpcController {
    pub fn new(cfg: MpcConfig, models: ModelBank, nsp: NspBank, dead_time: f64, warm_start: &PhaseShiftCommand) -> Result<Self> {
        cfg.validate()?;
        let period = models.params().period();
        let previous_best = crate::modulation::coerce_to_scheme(*warm_start, cfg.scheme).to_vector();
        Ok(DtMpcController {
            cfg,
            models,
            nsp,
            layout: dab::bridge_layout(),
            period,
            dead_time,
            previous_best,
            last_trace: Trace::default(),
        })
    }

    /// Predicted cost of applying `u` from `x`.
    pub fn predicted_cost(&self, x: &DVector<f64>, u: &[f64], v_ref: f64, load: f64) -> Result<CostBreakdown> {
        let model = self.models.get(load)?;
        let nsp = self.nsp.get(load)?;
        let spec = self.cfg.cost.with_v_ref(v_ref);
        let cmd = PhaseShiftCommand::from_vector(self.cfg.scheme, u)?;
        let tl = build_timeline(&cmd, &self.layout, self.period, self.dead_time)?;
        let p = nsp.predict_cycle(model.as_ref(), &tl, x)?;
        Ok(cost_breakdown(&extract_metrics(&p.segment_states, &tl, &spec), &spec))
    }

    pub fn mpc_step(&mut self, x: &DVector<f64>, v_ref: f64, load: f64) -> Result<Decision> {
        let model = self.models.get(load)?;
        let nsp = self.nsp.get(load)?;
        if x.len() != nsp.state_dim() {
            return Err(Error::InvalidArgument(format!(
                "measurement has {} entries, predictor expects {}",
                x.len(),
                nsp.state_dim()
            )));
        }
        let spec = self.cfg.cost.with_v_ref(v_ref);
        let (scheme, layout, period, dead_time) = (self.cfg.scheme, &self.layout, self.period, self.dead_time);
        let mut cost = |u: &[f64]| -> Result<f64> {
            let cmd = PhaseShiftCommand::from_vector(scheme, u)?;
            let tl = build_timeline(&cmd, layout, period, dead_time)?;
            let p = nsp.predict_cycle(model.as_ref(), &tl, x)?;
            Ok(total_cost(&extract_metrics(&p.segment_states, &tl, &spec), &spec))
        };
        let r = optimize_sso(
            &mut cost,
            &self.previous_best,
            &self.cfg.sso,
            &OptimizeBudget::iterations(self.cfg.iterations),
        )?;
        self.previous_best = r.best.clone();
        self.last_trace = r.trace;
        Ok(Decision {
            command: PhaseShiftCommand::from_vector(scheme, &r.best)?,
            evals: r.evals,
        })
    }
}

impl Controller for DtMpcController {
    fn name(&self) -> &str {
        "dt_mpc"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision> {
        self.mpc_step(obs.x, obs.v_ref, obs.load_estimate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub command: PhaseShiftCommand,
    pub x_end: Vec<f64>,
    pub v_ref: f64,
    pub load: f64,
    pub metrics: CycleMetrics,
    pub cost: CostBreakdown,
    pub evals: usize,
}

/// Table-style summary of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    /// Cycles from the step until the output enters the 2% band for good;
    /// `None` if it never does within the run.
    pub settling_cycles: Option<usize>,
    pub max_voltage_deviation: f64,
    pub max_i_l: f64,
    /// Mean peak-to-peak current over the final `STEADY_WINDOW` cycles.
    pub i_pp_steady: f64,
    pub zvs_events_satisfied: usize,
    pub zvs_events: usize,
    /// Largest realised gate value in the cycles right after the step.
    pub post_step_gate_max: f64,
    /// Share of settled cycles whose realised gate exceeds 0.9.
    pub settled_gate_fraction: f64,
    pub total_evals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub controller: String,
    pub step_cycle: Option<usize>,
    pub records: Vec<CycleRecord>,
    pub summary: ScenarioSummary,
}

pub const SETTLING_BAND: f64 = 0.02;
pub const SETTLING_HOLD: usize = 5;
pub const STEADY_WINDOW: usize = 10;
pub const POST_STEP_CYCLES: usize = 3;

/// Receding-horizon loop: measure, decide, advance the plant by one period.
pub fn run_scenario(plant: &Plant, controller: &mut dyn Controller, scenario: &Scenario, cost: &CostSpec) -> Result<ScenarioResult> {
    let m = dab::V_C2 + 1;
    scenario.validate(m)?;
    let mut x = DVector::from_vec(scenario.initial_state.clone());
    let mut records = Vec::with_capacity(scenario.duration_cycles);
    for k in 0..scenario.duration_cycles {
        let v_ref = scenario.v_ref.at(k);
        let load = scenario.load.at(k);
        let obs = Observation {
            cycle: k,
            x: &x,
            v_ref,
            load_estimate: scenario.load.at(k.saturating_sub(1)),
        };
        let d = controller.decide(&obs)?;
        d.command.validate()?;
        let (traj, tl) = plant.advance(&x, &d.command, load)?;
        let spec = cost.with_v_ref(v_ref);
        let metrics = extract_metrics(&traj.event_states(), &tl, &spec);
        x = traj.final_state().clone();
        records.push(CycleRecord {
            cycle: k,
            command: d.command,
            x_end: x.as_slice().to_vec(),
            v_ref,
            load,
            metrics,
            cost: cost_breakdown(&metrics, &spec),
            evals: d.evals,
        });
    }
    let step_cycle = scenario.step_cycle();
    let summary = summarize(&records, step_cycle.unwrap_or(0));
    Ok(ScenarioResult {
        scenario: scenario.name.clone(),
        controller: controller.name().to_string(),
        step_cycle,
        records,
        summary,
    })
}

/// Index of the first cycle from which the output stays inside the band for
/// `SETTLING_HOLD` cycles and to the end of the run.
pub fn settling_start(records: &[CycleRecord], from: usize) -> Option<usize> {
    let inside: Vec<bool> = records
        .iter()
        .map(|r| (r.x_end[dab::V_C2] - r.v_ref).abs() <= SETTLING_BAND * r.v_ref)
        .collect();
    let mut start = None;
    for k in (from..inside.len()).rev() {
        if inside[k] {
            start = Some(k);
        } else {
            break;
        }
    }
    start.filter(|s| inside.len() - s >= SETTLING_HOLD)
}

pub fn summarize(records: &[CycleRecord], step: usize) -> ScenarioSummary {
    if records.is_empty() {
        return ScenarioSummary::default();
    }
    let settled = settling_start(records, step);
    let after: Vec<&CycleRecord> = records.iter().skip(step).collect();
    let tail = &records[records.len().saturating_sub(STEADY_WINDOW)..];
    let last = records.last().expect("non-empty");
    let settled_fraction = match settled {
        Some(s) => {
            let n = records.len() - s;
            records[s..].iter().filter(|r| r.cost.gate > 0.9).count() as f64 / n as f64
        }
        None => 0.0,
    };
    ScenarioSummary {
        settling_cycles: settled.map(|s| s + 1 - step),
        max_voltage_deviation: after.iter().map(|r| (r.x_end[dab::V_C2] - r.v_ref).abs()).fold(0.0, f64::max),
        max_i_l: after.iter().map(|r| r.metrics.i_peak).fold(0.0, f64::max),
        i_pp_steady: tail.iter().map(|r| r.metrics.i_pp).sum::<f64>() / tail.len() as f64,
        zvs_events_satisfied: last.metrics.zvs_satisfied,
        zvs_events: last.metrics.zvs_events,
        post_step_gate_max: records
            .iter()
            .skip(step)
            .take(POST_STEP_CYCLES)
            .map(|r| r.cost.gate)
            .fold(0.0, f64::max),
        settled_gate_fraction: settled_fraction,
        total_evals: records.iter().map(|r| r.evals).sum(),
    }
}

impl ScenarioResult {
    /// CSV `cycle,d0,d1,d2,iL,vC1,vC2,vref,load,J,Jpri,gate,ipp,zvs_def,evals`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,d0,d1,d2,iL,vC1,vC2,vref,load,J,Jpri,gate,ipp,zvs_def,evals\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                r.cycle,
                r.command.d0,
                r.command.d1,
                r.command.d2,
                r.x_end[dab::I_L],
                r.x_end[dab::V_C1],
                r.x_end[dab::V_C2],
                r.v_ref,
                r.load,
                r.cost.j,
                r.cost.j_pri,
                r.cost.gate,
                r.metrics.i_pp,
                r.metrics.zvs_deficit,
                r.evals
            );
        }
        out
    }
}
