//! Versioned run configuration and the benchmark, evaluation and report
//! pipelines behind the command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{
    run_scenario, sps_operating_point, DtMpcController, MpcConfig, PiConfig, PiController, Plant, ScenarioResult,
    ScenarioSet, ScenarioSummary,
};
use crate::dab::{self, DabParams};
use crate::error::{Error, Result};
use crate::modulation::{build_timeline, PhaseShiftCommand, Scheme};
use crate::objectives::{extract_metrics, total_cost, CostSpec};
use crate::optimizer::{
    optimize_adaptive_grid, optimize_grid, optimize_sso, AdaptiveGridConfig, GridConfig, OptimizeBudget,
    OptimizeResult, SsoConfig, Termination,
};
use crate::solver::{integrate, integrate_event_driven, SolverConfig, SolverKind, Trajectory};
use crate::surrogate::{train_bank, DatasetGrid, NspBank, NspModel, TrainConfig, TrainReport};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Trained predictor bank; relative paths resolve against `out_dir`.
    pub nsp: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("out"),
            nsp: PathBuf::from("nsp_bank.json"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBenchConfig {
    pub load_fraction: f64,
    /// TPS commands `[d0, d1, d2]`, one benchmark cycle each.
    pub commands: Vec<[f64; 3]>,
    /// Start state; empty means the periodic steady state of each command.
    pub initial_state: Vec<f64>,
    pub euler_step: f64,
    pub rk2_step: f64,
    pub rk4_step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SolverBenchConfig {
    fn default() -> Self {
        SolverBenchConfig {
            load_fraction: 0.3,
            commands: vec![[0.3, 0.2, 0.1], [0.25, 0.25, 0.25], [0.1, 0.3, 0.2]],
            initial_state: Vec::new(),
            euler_step: 50e-9,
            rk2_step: 75e-9,
            rk4_step: 150e-9,
            rel_tol: 1e-10,
            abs_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NspEvalConfig {
    pub test_cycles: usize,
    pub rollout_cycles: usize,
    pub rollout_start: Vec<f64>,
    pub rollout_voltage: f64,
}

impl Default for NspEvalConfig {
    fn default() -> Self {
        NspEvalConfig {
            test_cycles: 200,
            rollout_cycles: 1000,
            rollout_start: vec![0.0, 48.0, 12.0],
            rollout_voltage: 24.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerBenchConfig {
    pub load_fraction: f64,
    /// Output voltage of the SPS steady state the cost is evaluated from.
    pub operating_voltage: f64,
    pub v_ref: f64,
    pub schemes: Vec<Scheme>,
    pub start: f64,
    pub max_evals: usize,
    /// Relative distance to the best cost that counts as reaching it.
    pub target_tolerance: f64,
    pub grid: GridConfig,
    pub adaptive_grid: AdaptiveGridConfig,
}

impl Default for OptimizerBenchConfig {
    fn default() -> Self {
        OptimizerBenchConfig {
            load_fraction: 0.3,
            operating_voltage: 24.0,
            v_ref: 24.0,
            schemes: vec![Scheme::Sps, Scheme::Dps, Scheme::Tps],
            start: 0.25,
            max_evals: 3000,
            target_tolerance: 0.01,
            grid: GridConfig::default(),
            adaptive_grid: AdaptiveGridConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub scheme: Scheme,
    pub iterations: usize,
}

impl Default for MpcSettings {
    fn default() -> Self {
        let m = MpcConfig::default();
        MpcSettings {
            scheme: m.scheme,
            iterations: m.iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub version: u32,
    /// Seeds dataset generation and training; overrides `train.seed`.
    pub seed: u64,
    pub dead_time: f64,
    /// Scales the plant's inductance and capacitances (1.0 = no mismatch).
    pub plant_perturbation: f64,
    pub paths: Paths,
    pub dab: DabParams,
    pub solver_bench: SolverBenchConfig,
    pub dataset: DatasetGrid,
    pub train: TrainConfig,
    pub nsp_eval: NspEvalConfig,
    pub cost: CostSpec,
    pub sso: SsoConfig,
    pub optimizer_bench: OptimizerBenchConfig,
    pub mpc: MpcSettings,
    pub pi: PiConfig,
    pub scenarios: ScenarioSet,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            version: CONFIG_VERSION,
            seed: 7,
            dead_time: 0.0,
            plant_perturbation: 1.0,
            paths: Paths::default(),
            dab: DabParams::default(),
            solver_bench: SolverBenchConfig::default(),
            dataset: DatasetGrid::default(),
            train: TrainConfig::default(),
            nsp_eval: NspEvalConfig::default(),
            cost: CostSpec::default(),
            sso: SsoConfig::default(),
            optimizer_bench: OptimizerBenchConfig::default(),
            mpc: MpcSettings::default(),
            pi: PiConfig::default(),
            scenarios: ScenarioSet::default(),
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(self.plant_perturbation > 0.0) {
            return Err(Error::Config("plant_perturbation must be positive".into()));
        }
        self.dab.validate()?;
        self.cost.validate()?;
        self.sso.validate()?;
        self.train.validate()?;
        self.mpc_config().validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_out_dir(mut self, dir: PathBuf) -> Self {
        self.paths.out_dir = dir;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            scheme: self.mpc.scheme,
            iterations: self.mpc.iterations,
            sso: self.sso,
            cost: self.cost.clone(),
        }
    }

    pub fn nsp_path(&self) -> PathBuf {
        self.paths.out_dir.join(&self.paths.nsp)
    }

    /// Short digest of the effective configuration; the output directory
    /// does not affect results and is left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths.out_dir = PathBuf::new();
        hex::encode(&Sha256::digest(c.to_toml().as_bytes())[..8])
    }

    /// Loads the predictor bank, with a hint when it has not been trained.
    pub fn load_bank(&self) -> Result<NspBank> {
        let path = self.nsp_path();
        match std::fs::read_to_string(&path) {
            Ok(text) => NspBank::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact {
                path,
                hint: "run `twinmpc train-nsp` with the same --config and --out first".into(),
            }),
            Err(e) => Err(Error::Io(e)),
        }
    }

    /// Every load fraction some stage needs a predictor for.
    pub fn load_fractions(&self) -> Vec<f64> {
        let mut v = self.scenarios.load_fractions();
        v.push(self.solver_bench.load_fraction);
        v.push(self.optimizer_bench.load_fraction);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Per-load training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub load_ohms: f64,
    pub worst_train_mse: f64,
    pub worst_validation_mse: f64,
    pub report: TrainReport,
}

pub fn train_nsp(cfg: &HarnessConfig) -> Result<(NspBank, Vec<TrainSummary>)> {
    let (bank, reports) = train_bank(
        &cfg.dab,
        &cfg.load_fractions(),
        &cfg.dataset,
        &cfg.train_config(),
        cfg.dead_time,
        cfg.seed,
    )?;
    let summaries = reports
        .into_iter()
        .map(|(r, report)| TrainSummary {
            load_ohms: r,
            worst_train_mse: report.worst_train_mse(),
            worst_validation_mse: report.states.iter().map(|s| s.validation_mse).fold(0.0, f64::max),
            report,
        })
        .collect();
    Ok((bank, summaries))
}

fn max_abs_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverRow {
    pub cycle: usize,
    pub method: String,
    pub step: Option<f64>,
    pub points: usize,
    /// Largest absolute state error at the switching events.
    pub max_event_error: f64,
    pub end_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub rows: Vec<SolverRow>,
    pub provenance: Vec<String>,
}

/// Wall time per method relative to RK4; kept out of the report because
/// it is not reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTiming {
    pub relative_to_rk4: Vec<(String, f64)>,
}

impl SolverReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,method,step,points,max_event_error,end_error\n");
        for r in &self.rows {
            let step = r.step.map_or(String::new(), |s| format!("{s:?}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{:?}",
                r.cycle, r.method, step, r.points, r.max_event_error, r.end_error
            );
        }
        out
    }

    /// Rows of one method.
    pub fn method(&self, name: &str) -> Vec<&SolverRow> {
        self.rows.iter().filter(|r| r.method == name).collect()
    }
}

/// Runs every predictor over the configured cycles against the adaptive
/// reference. `bank` adds the learned predictor when present.
pub fn bench_solvers(cfg: &HarnessConfig, bank: Option<&NspBank>) -> Result<(SolverReport, SolverTiming)> {
    let sb = &cfg.solver_bench;
    let p = &cfg.dab;
    let layout = dab::bridge_layout();
    let load = p.load_resistance(sb.load_fraction);
    let model = dab::compile_model(p, load)?;
    let euler_chain = NspModel::zeroed(&layout.conduction_states(), &cfg.train.hidden, 3, 1.0)?;
    let reference = SolverConfig::adaptive(sb.rel_tol, sb.abs_tol);
    let mut report = SolverReport::default();
    let mut wall: Vec<(String, f64)> = Vec::new();
    let mut add_wall = |name: &str, secs: f64| match wall.iter_mut().find(|(n, _)| n == name) {
        Some(e) => e.1 += secs,
        None => wall.push((name.to_string(), secs)),
    };
    for (ci, c) in sb.commands.iter().enumerate() {
        let cmd = PhaseShiftCommand::tps(c[0], c[1], c[2]);
        let tl = build_timeline(&cmd, &layout, p.period(), cfg.dead_time)?;
        let x0 = if sb.initial_state.is_empty() {
            crate::control::periodic_steady_state(&model, &tl, &DVector::zeros(3))?
        } else {
            DVector::from_vec(sb.initial_state.clone())
        };
        let r = integrate(&model, &tl, &x0, &reference)?;
        let ref_events = r.event_states();
        let ref_end = r.final_state().clone();
        let mut push = |method: &str, step: Option<f64>, traj_points: usize, events: Vec<DVector<f64>>| {
            let end = events.last().cloned().unwrap_or_else(|| x0.clone());
            report.rows.push(SolverRow {
                cycle: ci,
                method: method.to_string(),
                step,
                points: traj_points,
                max_event_error: max_abs_diff(&events, &ref_events),
                end_error: (&end - &ref_end).amax(),
            });
        };
        for (kind, h) in [
            (SolverKind::Euler, sb.euler_step),
            (SolverKind::Rk2, sb.rk2_step),
            (SolverKind::Rk4, sb.rk4_step),
        ] {
            let t = Instant::now();
            let traj: Trajectory = integrate(&model, &tl, &x0, &SolverConfig::fixed(kind, h))?;
            add_wall(kind.name(), t.elapsed().as_secs_f64());
            push(kind.name(), Some(h), traj.stats.points, traj.event_states());
        }
        let t = Instant::now();
        let ed = integrate_event_driven(&model, &tl, &x0)?;
        add_wall("event_driven", t.elapsed().as_secs_f64());
        push("event_driven", None, ed.stats.points, ed.event_states());

        let t = Instant::now();
        let eu = euler_chain.predict_cycle(&model, &tl, &x0)?;
        add_wall("euler_chain", t.elapsed().as_secs_f64());
        push("euler_chain", None, eu.net_evaluations, eu.segment_states);

        if let Some(bank) = bank {
            let nsp = bank.get(load)?;
            let t = Instant::now();
            let pr = nsp.predict_cycle(&model, &tl, &x0)?;
            add_wall("nsp", t.elapsed().as_secs_f64());
            push("nsp", None, pr.net_evaluations, pr.segment_states);
        }
    }
    let rk4 = wall.iter().find(|(n, _)| n == SolverKind::Rk4.name()).map_or(1.0, |w| w.1.max(1e-12));
    let timing = SolverTiming {
        relative_to_rk4: wall.into_iter().map(|(n, w)| (n, w / rk4)).collect(),
    };
    report.provenance.push("solvers.csv".into());
    Ok((report, timing))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NspLoadEval {
    pub load_ohms: f64,
    /// Mean scaled end-state error of the predictor over mean chained-Euler
    /// error, on random cycles against the adaptive reference.
    pub per_cycle_ratio: f64,
    pub per_cycle_nsp_error: f64,
    pub per_cycle_euler_error: f64,
    /// Per-state max rollout error over the reference signal range.
    pub rollout_nsp_error: Vec<f64>,
    pub rollout_euler_error: Vec<f64>,
    /// First cycle at which chained Euler produced a non-finite state.
    pub rollout_euler_blowup: Option<usize>,
    pub rollout_csv: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NspEvalReport {
    pub loads: Vec<NspLoadEval>,
    pub provenance: Vec<String>,
}

/// Width of each state's sampling box, used to compare mixed-unit errors.
fn state_scales(grid: &DatasetGrid) -> Vec<f64> {
    grid.initial_state_box.iter().map(|[lo, hi]| (hi - lo).max(1e-12)).collect()
}

fn scaled_error(a: &DVector<f64>, b: &DVector<f64>, scale: &[f64]) -> f64 {
    a.iter().zip(b.iter()).zip(scale).map(|((x, y), s)| ((x - y) / s).abs()).fold(0.0, f64::max)
}

/// Accuracy of the trained predictor: one-cycle errors on random cycles and a
/// long open-loop rollout, both against chained Euler at the same points.
pub fn eval_nsp(cfg: &HarnessConfig, bank: &NspBank) -> Result<(NspEvalReport, Vec<(String, String)>)> {
    let p = &cfg.dab;
    let layout = dab::bridge_layout();
    let ev = &cfg.nsp_eval;
    let scale = state_scales(&cfg.dataset);
    let euler = NspModel::zeroed(&layout.conduction_states(), &cfg.train.hidden, 3, 1.0)?;
    let reference = cfg.dataset.reference_config();
    let mut report = NspEvalReport::default();
    let mut files = Vec::new();
    for (li, r) in bank.loads().into_iter().enumerate() {
        let model = dab::compile_model(p, r)?;
        let nsp = bank.get(r)?;
        let errors: Vec<Result<(f64, f64)>> = (0..ev.test_cycles)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57);
                rng.set_stream((li * ev.test_cycles + k) as u64);
                let u: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
                let x0 = DVector::from_iterator(
                    3,
                    cfg.dataset.initial_state_box.iter().map(|[lo, hi]| rng.gen_range(*lo..*hi)),
                );
                let tl = build_timeline(&PhaseShiftCommand::from_vector(Scheme::Tps, &u)?, &layout, p.period(), cfg.dead_time)?;
                let xr = integrate(&model, &tl, &x0, &reference)?;
                let xn = nsp.predict_cycle(&model, &tl, &x0)?.x_end;
                let xe = euler.predict_cycle(&model, &tl, &x0)?.x_end;
                Ok((scaled_error(&xn, xr.final_state(), &scale), scaled_error(&xe, xr.final_state(), &scale)))
            })
            .collect();
        let errors = errors.into_iter().collect::<Result<Vec<_>>>()?;
        let n = errors.len().max(1) as f64;
        let e_nsp = errors.iter().map(|e| e.0).sum::<f64>() / n;
        let e_eul = errors.iter().map(|e| e.1).sum::<f64>() / n;

        let (d0, _) = sps_operating_point(&model, &layout, p.period(), cfg.dead_time, ev.rollout_voltage)?;
        let tl = build_timeline(&PhaseShiftCommand::sps(d0), &layout, p.period(), cfg.dead_time)?;
        let mut xr = DVector::from_vec(ev.rollout_start.clone());
        let mut xn = xr.clone();
        let mut xe = xr.clone();
        let mut blowup = None;
        let mut csv = String::from("cycle,ref_iL,ref_vC1,ref_vC2,nsp_iL,nsp_vC1,nsp_vC2,euler_iL,euler_vC1,euler_vC2\n");
        let mut lo = xr.clone();
        let mut hi = xr.clone();
        let mut max_n: Vec<f64> = vec![0.0; 3];
        let mut max_e: Vec<f64> = vec![0.0; 3];
        for k in 1..=ev.rollout_cycles {
            xr = integrate_event_driven(&model, &tl, &xr)?.final_state().clone();
            xn = nsp.predict_cycle(&model, &tl, &xn)?.x_end;
            if blowup.is_none() {
                match euler.predict_cycle(&model, &tl, &xe) {
                    Ok(p) => xe = p.x_end,
                    Err(Error::NonFinite { .. }) => blowup = Some(k),
                    Err(e) => return Err(e),
                }
            }
            for i in 0..3 {
                lo[i] = lo[i].min(xr[i]);
                hi[i] = hi[i].max(xr[i]);
                max_n[i] = max_n[i].max((xn[i] - xr[i]).abs());
                max_e[i] = if blowup.is_some() { f64::INFINITY } else { max_e[i].max((xe[i] - xr[i]).abs()) };
            }
            let _ = writeln!(
                csv,
                "{k},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                xr[0], xr[1], xr[2], xn[0], xn[1], xn[2], xe[0], xe[1], xe[2]
            );
        }
        let range: Vec<f64> = (0..3).map(|i| (hi[i] - lo[i]).max(1e-12)).collect();
        let name = format!("nsp_rollout_{li}.csv");
        report.loads.push(NspLoadEval {
            load_ohms: r,
            per_cycle_ratio: e_nsp / e_eul,
            per_cycle_nsp_error: e_nsp,
            per_cycle_euler_error: e_eul,
            rollout_nsp_error: (0..3).map(|i| max_n[i] / range[i]).collect(),
            rollout_euler_error: (0..3).map(|i| max_e[i] / range[i]).collect(),
            rollout_euler_blowup: blowup,
            rollout_csv: name.clone(),
        });
        report.provenance.push(name.clone());
        files.push((name, csv));
    }
    Ok((report, files))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRun {
    pub scheme: Scheme,
    pub method: String,
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub evals: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub max_evals_per_iteration: usize,
    /// Evaluations until the best cost is within tolerance of the best any
    /// method found for this scheme.
    pub evals_to_target: Option<usize>,
    pub trace_csv: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub runs: Vec<OptimizerRun>,
    pub provenance: Vec<String>,
}

impl OptimizerReport {
    pub fn run(&self, scheme: Scheme, method: &str) -> Option<&OptimizerRun> {
        self.runs.iter().find(|r| r.scheme == scheme && r.method == method)
    }
}

/// Grid, adaptive grid and simplex search on the predictor-backed cost of one
/// operating point, from the same start, for each scheme.
pub fn bench_optimizers(cfg: &HarnessConfig, bank: &NspBank) -> Result<(OptimizerReport, Vec<(String, String)>)> {
    let ob = &cfg.optimizer_bench;
    let p = &cfg.dab;
    let layout = dab::bridge_layout();
    let load = p.load_resistance(ob.load_fraction);
    let model = dab::compile_model(p, load)?;
    let nsp = bank.get(load)?;
    let (_, x) = sps_operating_point(&model, &layout, p.period(), cfg.dead_time, ob.operating_voltage)?;
    let spec = cfg.cost.with_v_ref(ob.v_ref);
    let mut report = OptimizerReport::default();
    let mut files = Vec::new();
    for &scheme in &ob.schemes {
        let mut cost = |u: &[f64]| -> Result<f64> {
            let cmd = PhaseShiftCommand::from_vector(scheme, u)?;
            let tl = build_timeline(&cmd, &layout, p.period(), cfg.dead_time)?;
            let pr = nsp.predict_cycle(&model, &tl, &x)?;
            Ok(total_cost(&extract_metrics(&pr.segment_states, &tl, &spec), &spec))
        };
        let start = vec![ob.start; scheme.dim()];
        let budget = OptimizeBudget::evals(ob.max_evals);
        let runs: Vec<(&str, OptimizeResult)> = vec![
            ("grid", optimize_grid(&mut cost, &start, &ob.grid, &budget)?),
            ("adaptive_grid", optimize_adaptive_grid(&mut cost, &start, &ob.adaptive_grid, &budget)?),
            ("sso", optimize_sso(&mut cost, &start, &cfg.sso, &budget)?),
        ];
        let best = runs.iter().map(|r| r.1.best_cost).fold(f64::INFINITY, f64::min);
        let target = best + ob.target_tolerance * best.abs();
        for (method, r) in runs {
            let name = format!("optimizer_{}_{}.csv", scheme.name().to_lowercase(), method);
            report.runs.push(OptimizerRun {
                scheme,
                method: method.to_string(),
                best: r.best.clone(),
                best_cost: r.best_cost,
                evals: r.evals,
                iterations: r.iterations,
                termination: r.termination,
                max_evals_per_iteration: r.trace.evals_per_iteration().into_iter().max().unwrap_or(0),
                evals_to_target: r.trace.evals_to_reach(target),
                trace_csv: name.clone(),
            });
            report.provenance.push(name.clone());
            files.push((name, r.trace.to_csv()));
        }
    }
    Ok((report, files))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub scenario: String,
    pub controller: String,
    pub summary: ScenarioSummary,
    pub step_cycle: Option<usize>,
    pub csv: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub entries: Vec<ScenarioEntry>,
    pub provenance: Vec<String>,
}

impl ScenarioReport {
    pub fn entry(&self, scenario: &str, controller: &str) -> Option<&ScenarioEntry> {
        self.entries.iter().find(|e| e.scenario == scenario && e.controller == controller)
    }
}

/// PI and predictive control on both standard scenarios.
pub fn run_scenarios(cfg: &HarnessConfig, bank: &NspBank) -> Result<(ScenarioReport, Vec<ScenarioResult>)> {
    let p = &cfg.dab;
    let scenarios = cfg.scenarios.build(p, cfg.dead_time)?;
    let loads: Vec<f64> = cfg.scenarios.load_fractions().iter().map(|f| p.load_resistance(*f)).collect();
    let plant = Plant::new(&p.perturbed(cfg.plant_perturbation), &loads, cfg.dead_time)?;
    let models = crate::dab::ModelBank::new(p, &loads)?;
    let jobs: Vec<(usize, bool)> = (0..scenarios.len()).flat_map(|s| [(s, false), (s, true)]).collect();
    let results: Vec<Result<ScenarioResult>> = jobs
        .par_iter()
        .map(|&(si, mpc)| {
            let sc = &scenarios[si];
            if mpc {
                let mut c = DtMpcController::new(cfg.mpc_config(), models.clone(), bank.clone(), cfg.dead_time, &sc.initial_command)?;
                run_scenario(&plant, &mut c, sc, &cfg.cost)
            } else {
                let mut c = PiController::bumpless(cfg.pi, p.period(), sc.initial_command.d0);
                run_scenario(&plant, &mut c, sc, &cfg.cost)
            }
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = ScenarioReport::default();
    for r in &results {
        let name = format!("scenario_{}_{}.csv", r.scenario, r.controller);
        report.entries.push(ScenarioEntry {
            scenario: r.scenario.clone(),
            controller: r.controller.clone(),
            summary: r.summary.clone(),
            step_cycle: r.step_cycle,
            csv: name.clone(),
        });
        report.provenance.push(name);
    }
    Ok((report, results))
}

/// Combined report; each section lists the raw files its numbers come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub nsp: Option<NspEvalReport>,
    pub solvers: Option<SolverReport>,
    pub optimizers: Option<OptimizerReport>,
    pub scenarios: Option<ScenarioReport>,
}

pub const NSP_EVAL_FILE: &str = "nsp_eval.json";
pub const SOLVERS_FILE: &str = "solvers.json";
pub const OPTIMIZERS_FILE: &str = "optimizers.json";
pub const SCENARIOS_FILE: &str = "scenarios.json";
pub const REPORT_FILE: &str = "report.json";

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

/// Writes `name` under the output directory, creating it when needed.
pub fn write_artifact(cfg: &HarnessConfig, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    let path = cfg.paths.out_dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn read_section<T: for<'de> Deserialize<'de>>(cfg: &HarnessConfig, name: &str) -> Result<Option<T>> {
    let path = cfg.paths.out_dir.join(name);
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::Io(e)),
    }
}

/// Gathers whichever section files exist; fails if there are none.
pub fn assemble_report(cfg: &HarnessConfig) -> Result<Report> {
    let report = Report {
        version: REPORT_VERSION,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        nsp: read_section(cfg, NSP_EVAL_FILE)?,
        solvers: read_section(cfg, SOLVERS_FILE)?,
        optimizers: read_section(cfg, OPTIMIZERS_FILE)?,
        scenarios: read_section(cfg, SCENARIOS_FILE)?,
    };
    if report.nsp.is_none() && report.solvers.is_none() && report.optimizers.is_none() && report.scenarios.is_none() {
        return Err(Error::MissingArtifact {
            path: cfg.paths.out_dir.clone(),
            hint: "no benchmark sections found; run eval-nsp, bench-solvers, bench-optimizers or run-scenarios first".into(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = HarnessConfig::default();
        let text = cfg.to_toml();
        assert_eq!(HarnessConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(HarnessConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_version_and_keys() {
        assert!(matches!(HarnessConfig::from_toml("version = 2"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            HarnessConfig::from_toml("[mpc]\niterations = 0"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seed_reaches_training() {
        let cfg = HarnessConfig::default().with_seed(99);
        assert_eq!(cfg.train_config().seed, 99);
        assert_ne!(cfg.digest(), HarnessConfig::default().digest());
        assert_eq!(cfg.clone().with_out_dir("elsewhere".into()).digest(), cfg.digest());
    }

    #[test]
    fn missing_bank_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HarnessConfig::default().with_out_dir(dir.path().to_path_buf());
        let err = cfg.load_bank().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("train-nsp"));
        assert_eq!(assemble_report(&cfg).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn solver_bench_reproduces_point_counts() {
        let cfg = HarnessConfig::default();
        let (rep, timing) = bench_solvers(&cfg, None).unwrap();
        for (m, n) in [("euler", 200), ("rk2", 134), ("rk4", 67), ("event_driven", 8), ("euler_chain", 8)] {
            let rows = rep.method(m);
            assert_eq!(rows.len(), cfg.solver_bench.commands.len(), "{m}");
            assert!(rows.iter().all(|r| r.points == n), "{m}: {:?}", rows);
        }
        assert!(rep.method("event_driven").iter().all(|r| r.max_event_error < 1e-6));
        assert!(timing.relative_to_rk4.iter().any(|(n, v)| n == "rk4" && *v == 1.0));
        assert!(rep.to_csv().starts_with("cycle,method,step,points"));
    }

    #[test]
    fn empty_cycle_list_gives_empty_section() {
        let mut cfg = HarnessConfig::default();
        cfg.solver_bench.commands.clear();
        let (rep, _) = bench_solvers(&cfg, None).unwrap();
        assert!(rep.rows.is_empty());
    }
}
