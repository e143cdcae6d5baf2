//! Residual datasets: reference-minus-Euler increments per switching segment.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modulation::{build_timeline, BridgeLayout, PhaseShiftCommand, Scheme, SwitchTimeline, TimelineEvent};
use crate::netlist::{PiecewiseModel, SwitchedSystem};
use crate::solver::{integrate_adaptive_reference, SolverConfig};
use crate::SwitchState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub cycle: usize,
    pub state: SwitchState,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub h: f64,
    pub residual: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualDataset {
    pub samples: Vec<Sample>,
    /// Hash of the generating configuration.
    pub provenance: String,
    /// Cycles dropped because the reference solver failed on them.
    pub discarded: usize,
}

/// Operating-condition sampling plan.
///
/// For each scheme, commands sit on a `commands_per_axis^n` lattice at cell
/// centres. Every (command, load) pair is simulated from random initial
/// states drawn uniformly from the given box; lower-dimensional schemes get
/// proportionally more repeats so each scheme contributes equally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetGrid {
    pub schemes: Vec<Scheme>,
    pub commands_per_axis: usize,
    pub repeats: usize,
    /// Uniform box for the initial state, one `[lo, hi]` per state variable.
    pub initial_state_box: Vec<[f64; 2]>,
    /// Relative jitter added to lattice commands (fraction of one cell).
    pub command_jitter: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for DatasetGrid {
    fn default() -> Self {
        DatasetGrid {
            schemes: vec![Scheme::Tps, Scheme::Sps],
            commands_per_axis: 10,
            repeats: 32,
            initial_state_box: vec![[-150.0, 150.0], [46.0, 49.0], [10.0, 36.0]],
            command_jitter: 1.0,
            rel_tol: 1e-10,
            abs_tol: 1e-9,
        }
    }
}

impl DatasetGrid {
    fn lattice(&self, n: usize) -> Vec<Vec<f64>> {
        let k = self.commands_per_axis;
        (0..k.pow(n as u32))
            .map(|mut idx| {
                (0..n)
                    .map(|_| {
                        let i = idx % k;
                        idx /= k;
                        (i as f64 + 0.5) / k as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// `(scheme, lattice command, repeats)` for every lattice point.
    pub fn commands(&self) -> Vec<(Scheme, Vec<f64>, usize)> {
        let n_max = self.schemes.iter().map(|s| s.dim()).max().unwrap_or(0);
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            let n = scheme.dim();
            let reps = self.repeats * self.commands_per_axis.pow((n_max - n) as u32);
            for c in self.lattice(n) {
                out.push((scheme, c, reps));
            }
        }
        out
    }

    /// Simulated cycles per load.
    pub fn cycles_per_load(&self) -> usize {
        self.commands().iter().map(|c| c.2).sum()
    }

    pub fn reference_config(&self) -> SolverConfig {
        SolverConfig::adaptive(self.rel_tol, self.abs_tol)
    }

    fn hash(&self, loads: &[f64], period: f64, seed: u64) -> String {
        let doc = serde_json::json!({ "grid": self, "loads": loads, "period": period, "seed": seed });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn single_segment(state: &SwitchState, h: f64) -> SwitchTimeline {
    SwitchTimeline {
        period: h,
        events: vec![TimelineEvent {
            time: 0.0,
            state: state.clone(),
            dead_legs: vec![],
            transitions: vec![],
        }],
        layout: None,
    }
}

/// End of one segment under the adaptive reference solver.
pub fn reference_segment(
    sys: &dyn SwitchedSystem,
    state: &SwitchState,
    x: &DVector<f64>,
    h: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    let tl = single_segment(state, h);
    Ok(integrate_adaptive_reference(sys, &tl, x, cfg)?.final_state().clone())
}

/// `x + h (A x + f)` for the segment of `state`.
pub fn euler_segment(sys: &dyn SwitchedSystem, state: &SwitchState, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let seg = sys.segment(state)?;
    Ok(x + (&seg.a * x + &seg.f) * h)
}

/// Reference-minus-Euler increment over one segment.
pub fn residual(
    sys: &dyn SwitchedSystem,
    state: &SwitchState,
    x: &DVector<f64>,
    h: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    Ok(reference_segment(sys, state, x, h, cfg)? - euler_segment(sys, state, x, h)?)
}

/// Samples for one cycle: segments chained along the reference solution.
fn cycle_samples(
    model: &PiecewiseModel,
    tl: &SwitchTimeline,
    x0: DVector<f64>,
    cycle: usize,
    cfg: &SolverConfig,
) -> Result<Vec<Sample>> {
    let u = model.input_vector().as_slice().to_vec();
    let mut x = x0;
    let mut out = Vec::with_capacity(tl.events.len());
    for i in 0..tl.events.len() {
        let h = tl.segment_duration(i);
        if h <= 0.0 {
            continue;
        }
        let state = tl.resolved_state(i, x.as_slice());
        let x_ref = reference_segment(model, &state, &x, h, cfg)?;
        let x_fe = euler_segment(model, &state, &x, h)?;
        out.push(Sample {
            cycle,
            state,
            x: x.as_slice().to_vec(),
            u: u.clone(),
            h,
            residual: (&x_ref - x_fe).as_slice().to_vec(),
        });
        x = x_ref;
    }
    Ok(out)
}

/// Simulate the sampling plan for each `(load, model)` pair and collect one
/// sample per inter-event segment. Deterministic for a fixed seed.
pub fn generate_dataset(
    models: &[(f64, &PiecewiseModel)],
    layout: &BridgeLayout,
    period: f64,
    dead_time: f64,
    grid: &DatasetGrid,
    seed: u64,
) -> Result<ResidualDataset> {
    if grid.commands_per_axis == 0 || grid.repeats == 0 || grid.schemes.is_empty() {
        return Err(Error::InvalidArgument("dataset grid is empty".into()));
    }
    if let Some((_, m)) = models.first() {
        if grid.initial_state_box.len() != m.state_dim() {
            return Err(Error::InvalidArgument(format!(
                "initial state box has {} entries, model has {} states",
                grid.initial_state_box.len(),
                m.state_dim()
            )));
        }
    }
    let commands = grid.commands();
    let mut jobs = Vec::new();
    for (li, _) in models.iter().enumerate() {
        for (c, (_, _, reps)) in commands.iter().enumerate() {
            for r in 0..*reps {
                jobs.push((li, c, r));
            }
        }
    }
    let cfg = grid.reference_config();
    let cell = 1.0 / grid.commands_per_axis as f64;
    let results: Vec<Result<Vec<Sample>>> = jobs
        .par_iter()
        .enumerate()
        .map(|(cycle, &(li, c, _))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(cycle as u64);
            let (scheme, lattice, _) = &commands[c];
            let u: Vec<f64> = lattice
                .iter()
                .map(|v| (v + grid.command_jitter * cell * rng.gen_range(-0.5..0.5)).clamp(0.0, 1.0))
                .collect();
            let cmd = PhaseShiftCommand::from_vector(*scheme, &u)?;
            let tl = build_timeline(&cmd, layout, period, dead_time)?;
            let x0 = DVector::from_iterator(
                grid.initial_state_box.len(),
                grid.initial_state_box.iter().map(|[lo, hi]| if hi > lo { rng.gen_range(*lo..*hi) } else { *lo }),
            );
            cycle_samples(models[li].1, &tl, x0, cycle, &cfg)
        })
        .collect();
    let mut ds = ResidualDataset {
        provenance: grid.hash(&models.iter().map(|m| m.0).collect::<Vec<_>>(), period, seed),
        ..Default::default()
    };
    for r in results {
        match r {
            Ok(s) => ds.samples.extend(s),
            Err(Error::NonFinite { .. }) | Err(Error::StepUnderflow { .. }) => ds.discarded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ds)
}

impl ResidualDataset {
    /// CSV `state_bits,x...,u...,h,r...,cycle`.
    pub fn to_csv(&self) -> String {
        let (m, p) = self
            .samples
            .first()
            .map_or((0, 0), |s| (s.x.len(), s.u.len()));
        let mut out = String::from("state_bits");
        for i in 0..m {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..p {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",h");
        for i in 0..m {
            let _ = write!(out, ",r{i}");
        }
        out.push_str(",cycle\n");
        for s in &self.samples {
            out.push_str(&s.state.to_string());
            for v in s.x.iter().chain(&s.u).chain(std::iter::once(&s.h)).chain(&s.residual) {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(out, ",{}", s.cycle);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let m = cols.iter().filter(|c| c.starts_with('x')).count();
        let p = cols.iter().filter(|c| c.starts_with('u')).count();
        if cols.first() != Some(&"state_bits") || cols.len() != 2 * m + p + 3 {
            return Err(Error::Config(format!("unexpected dataset header '{header}'")));
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |what: &str| Error::Config(format!("dataset line {}: {what}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad("wrong field count"));
            }
            let state: SwitchState = f[0].parse().map_err(|_| bad("bad state bits"))?;
            let nums: Vec<f64> = f[1..f.len() - 1]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            let cycle = f[f.len() - 1].parse().map_err(|_| bad("bad cycle id"))?;
            samples.push(Sample {
                cycle,
                state,
                x: nums[..m].to_vec(),
                u: nums[m..m + p].to_vec(),
                h: nums[m + p],
                residual: nums[m + p + 1..].to_vec(),
            });
        }
        Ok(ResidualDataset {
            samples,
            provenance: String::new(),
            discarded: 0,
        })
    }
}
