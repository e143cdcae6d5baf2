//! Derivative-free search over the unit box: the sufficient-decrease simplex
//! method with positive-basis polling, plus grid and adaptive-grid baselines.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Reflect,
    Expand,
    Contract,
    Poll,
    Shrink,
    Grid,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Reflect => "reflect",
            Phase::Expand => "expand",
            Phase::Contract => "contract",
            Phase::Poll => "poll",
            Phase::Shrink => "shrink",
            Phase::Grid => "grid",
        }
    }
}

/// One cost evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub eval: usize,
    pub u: Vec<f64>,
    pub j: f64,
    pub phase: Phase,
    /// Scale `h_s` (grid step for the grid methods) when the point was evaluated.
    pub h: f64,
    /// Cost of the incumbent (best simplex vertex or grid centre) when the
    /// point was evaluated; the reference of the acceptance test.
    pub j0: f64,
    /// Whether this point entered the simplex / became the grid centre.
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// CSV `iter,eval,U...,J,phase,h,j0,accepted`.
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.u.len());
        let mut out = String::from("iter,eval");
        for i in 0..n {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",J,phase,h,j0,accepted\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.iter, r.eval);
            for v in &r.u {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(out, ",{:?},{},{:?},{:?},{}", r.j, r.phase.name(), r.h, r.j0, r.accepted as u8);
        }
        out
    }

    /// Evaluations made in each iteration, initialisation excluded.
    pub fn evals_per_iteration(&self) -> Vec<usize> {
        let last = self.rows.iter().map(|r| r.iter).max().unwrap_or(0);
        let mut counts = vec![0; last + 1];
        for r in &self.rows {
            counts[r.iter] += 1;
        }
        counts.into_iter().skip(1).collect()
    }

    /// Running minimum of the cost after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.j);
                best
            })
            .collect()
    }

    /// First evaluation count at which the best cost is within `target`.
    pub fn evals_to_reach(&self, target: f64) -> Option<usize> {
        self.best_so_far().iter().position(|b| *b <= target).map(|i| i + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeBudget {
    pub max_cost_evals: usize,
    pub max_iterations: usize,
}

impl OptimizeBudget {
    pub fn evals(max_cost_evals: usize) -> Self {
        OptimizeBudget {
            max_cost_evals,
            max_iterations: usize::MAX,
        }
    }

    pub fn iterations(max_iterations: usize) -> Self {
        OptimizeBudget {
            max_cost_evals: usize::MAX,
            max_iterations,
        }
    }
}

/// Why an optimiser stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ScaleUnderflow,
    EvalBudget,
    IterationBudget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub evals: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Trace,
}

/// Counts evaluations, enforces the budget and records the trace.
struct Evaluator<'a, F> {
    f: &'a mut F,
    trace: Trace,
    max_evals: usize,
    iter: usize,
    anchor: f64,
    best: f64,
    best_u: Vec<f64>,
}

/// Internal signal: the evaluation budget ran out mid-step.
struct OutOfBudget;

enum StepError {
    Budget(OutOfBudget),
    Cost(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        StepError::Cost(e)
    }
}

impl<'a, F: FnMut(&[f64]) -> Result<f64>> Evaluator<'a, F> {
    fn new(f: &'a mut F, max_evals: usize, start: &[f64]) -> Self {
        Evaluator {
            f,
            trace: Trace::default(),
            max_evals,
            iter: 0,
            anchor: f64::INFINITY,
            best: f64::INFINITY,
            best_u: start.to_vec(),
        }
    }

    fn evals(&self) -> usize {
        self.trace.rows.len()
    }

    fn eval(&mut self, u: &[f64], phase: Phase, h: f64) -> std::result::Result<f64, StepError> {
        if self.evals() >= self.max_evals {
            return Err(StepError::Budget(OutOfBudget));
        }
        let j = (self.f)(u)?;
        if !j.is_finite() {
            return Err(StepError::Cost(Error::NonFiniteCost { point: u.to_vec() }));
        }
        self.trace.rows.push(TraceRow {
            iter: self.iter,
            eval: self.evals() + 1,
            u: u.to_vec(),
            j,
            phase,
            h,
            j0: self.anchor,
            accepted: false,
        });
        if j < self.best {
            self.best = j;
            self.best_u = u.to_vec();
        }
        Ok(j)
    }

    fn mark_accepted(&mut self) {
        if let Some(r) = self.trace.rows.last_mut() {
            r.accepted = true;
        }
    }
}

pub fn clamp_unit(u: &mut [f64]) {
    for v in u {
        *v = v.clamp(0.0, 1.0);
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// `e_1..e_n` and `-(1/sqrt n) sum e_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveBasis {
    pub directions: Vec<Vec<f64>>,
}

impl PositiveBasis {
    pub fn new(n: usize) -> Self {
        let mut directions: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        directions.push(vec![-1.0 / (n as f64).sqrt(); n]);
        PositiveBasis { directions }
    }

    /// Non-negative coefficients expressing `v` in the basis.
    pub fn decompose(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let s = (n as f64).sqrt();
        // v = sum c_i e_i + c_n * (-(1/s) 1) with c_i = v_i + c_n / s >= 0.
        let c_last = v.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max) * s;
        let mut c: Vec<f64> = v.iter().map(|x| x + c_last / s).collect();
        c.push(c_last);
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsoConfig {
    pub initial_scale: f64,
    pub sigma: f64,
    pub rho: f64,
    pub min_scale: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
}

impl Default for SsoConfig {
    fn default() -> Self {
        SsoConfig {
            initial_scale: 0.1,
            sigma: 1e-4,
            rho: 0.5,
            min_scale: 1e-6,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
        }
    }
}

impl SsoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_scale > 0.0
            && self.sigma > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.min_scale > 0.0
            && self.reflection > 0.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid simplex search coefficients".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simplex {
    /// `n + 1` vertices sorted by cost (ties broken lexicographically).
    pub vertices: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    /// Scale `h_s`.
    pub h: f64,
    /// Next poll direction when a poll cycle is under way.
    pub poll_index: Option<usize>,
    pub eval_count: usize,
}

impl Simplex {
    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.vertices.len()).collect();
        idx.sort_by(|&a, &b| {
            self.costs[a]
                .total_cmp(&self.costs[b])
                .then_with(|| lexicographic(&self.vertices[a], &self.vertices[b]))
        });
        self.vertices = idx.iter().map(|&i| self.vertices[i].clone()).collect();
        self.costs = idx.iter().map(|&i| self.costs[i]).collect();
    }

    pub fn is_sorted(&self) -> bool {
        self.costs.windows(2).all(|w| w[0] <= w[1])
    }

    /// Replace the worst vertex and restore the ordering.
    fn replace_worst(&mut self, u: Vec<f64>, j: f64) {
        let n = self.vertices.len() - 1;
        self.vertices[n] = u;
        self.costs[n] = j;
        self.sort();
    }
}

/// Mean of every vertex except the worst.
pub fn centroid(simplex: &Simplex) -> Vec<f64> {
    let n = simplex.vertices.len() - 1;
    let d = simplex.dim();
    let mut c = vec![0.0; d];
    for v in &simplex.vertices[..n] {
        for (ci, vi) in c.iter_mut().zip(v) {
            *ci += vi;
        }
    }
    for ci in &mut c {
        *ci /= n as f64;
    }
    c
}

/// Vertices `u0` and `u0 + h e_i`, each offset reflected inward at the box edge.
pub fn axis_vertices(u0: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut out = vec![u0.to_vec()];
    for i in 0..u0.len() {
        let mut v = u0.to_vec();
        v[i] = if u0[i] + h <= 1.0 { u0[i] + h } else { u0[i] - h };
        clamp_unit(&mut v);
        out.push(v);
    }
    out
}

fn affine(c: &[f64], d: &[f64], coef: f64) -> Vec<f64> {
    // c + coef (c - d), clamped
    let mut u: Vec<f64> = c.iter().zip(d).map(|(ci, di)| ci + coef * (ci - di)).collect();
    clamp_unit(&mut u);
    u
}

fn build_simplex<F: FnMut(&[f64]) -> Result<f64>>(
    ev: &mut Evaluator<'_, F>,
    u0: &[f64],
    u0_cost: Option<f64>,
    h: f64,
    phase: Phase,
) -> std::result::Result<Simplex, StepError> {
    let verts = axis_vertices(u0, h);
    let mut costs = Vec::with_capacity(verts.len());
    for (i, v) in verts.iter().enumerate() {
        let j = match (i, u0_cost) {
            (0, Some(j)) => j,
            _ => {
                let j = ev.eval(v, phase, h)?;
                ev.mark_accepted();
                j
            }
        };
        costs.push(j);
    }
    let mut s = Simplex {
        vertices: verts,
        costs,
        h,
        poll_index: None,
        eval_count: 0,
    };
    s.sort();
    Ok(s)
}

/// Probe the next poll direction; on a full failed cycle shrink and rebuild.
fn poll_once<F: FnMut(&[f64]) -> Result<f64>>(
    s: &mut Simplex,
    ev: &mut Evaluator<'_, F>,
    basis: &PositiveBasis,
    cfg: &SsoConfig,
) -> std::result::Result<(), StepError> {
    let k = s.poll_index.unwrap_or(0);
    ev.anchor = s.costs[0];
    let mut u: Vec<f64> = s.vertices[0]
        .iter()
        .zip(&basis.directions[k])
        .map(|(x, d)| x + s.h * d)
        .collect();
    clamp_unit(&mut u);
    let j = ev.eval(&u, Phase::Poll, s.h)?;
    if j <= s.costs[0] - cfg.sigma * s.h * s.h {
        ev.mark_accepted();
        s.replace_worst(u, j);
        s.poll_index = None;
        return Ok(());
    }
    if k + 1 < basis.directions.len() {
        s.poll_index = Some(k + 1);
        return Ok(());
    }
    // Every direction failed: shrink and rebuild around the best vertex.
    let h = cfg.rho * s.h;
    let (u0, j0) = (s.vertices[0].clone(), s.costs[0]);
    s.h = h;
    s.poll_index = None;
    let rebuilt = build_simplex(ev, &u0, Some(j0), h, Phase::Shrink)?;
    s.vertices = rebuilt.vertices;
    s.costs = rebuilt.costs;
    Ok(())
}

fn sso_step_inner<F: FnMut(&[f64]) -> Result<f64>>(
    s: &mut Simplex,
    ev: &mut Evaluator<'_, F>,
    basis: &PositiveBasis,
    cfg: &SsoConfig,
) -> std::result::Result<(), StepError> {
    if s.poll_index.is_some() {
        return poll_once(s, ev, basis, cfg);
    }
    let n = s.vertices.len() - 1;
    ev.anchor = s.costs[0];
    let c = centroid(s);
    let worst = s.vertices[n].clone();
    let threshold = s.costs[0] - cfg.sigma * s.h * s.h;

    let ur = affine(&c, &worst, cfg.reflection);
    let jr = ev.eval(&ur, Phase::Reflect, s.h)?;
    let (cand, jc) = if jr < s.costs[0] {
        let ue = affine(&c, &worst, cfg.expansion);
        let je = ev.eval(&ue, Phase::Expand, s.h)?;
        if je < jr {
            (ue, je)
        } else {
            (ur, jr)
        }
    } else if jr < s.costs[n - 1] || n == 0 {
        (ur, jr)
    } else {
        // Outside contraction towards the reflected point when it beats the
        // worst vertex, inside contraction towards the worst otherwise.
        let uc = if jr < s.costs[n] {
            affine(&c, &worst, cfg.contraction)
        } else {
            affine(&c, &worst, -cfg.contraction)
        };
        let jc = ev.eval(&uc, Phase::Contract, s.h)?;
        (uc, jc)
    };
    if jc <= threshold {
        // Mark the accepted candidate in the trace.
        if let Some(row) = ev.trace.rows.iter_mut().rev().find(|r| r.u == cand && r.j == jc) {
            row.accepted = true;
        }
        s.replace_worst(cand, jc);
        return Ok(());
    }
    s.poll_index = Some(0);
    poll_once(s, ev, basis, cfg)
}

/// One iteration: a transformation of the worst vertex, or the next poll
/// direction once a transformation has failed the sufficient-decrease test.
pub fn sso_step<F: FnMut(&[f64]) -> Result<f64>>(simplex: &mut Simplex, costfn: &mut F, cfg: &SsoConfig) -> Result<()> {
    let basis = PositiveBasis::new(simplex.dim());
    let mut ev = Evaluator::new(costfn, usize::MAX, &simplex.vertices[0]);
    ev.best = simplex.costs[0];
    let r = sso_step_inner(simplex, &mut ev, &basis, cfg);
    simplex.eval_count += ev.evals();
    match r {
        Ok(()) => Ok(()),
        Err(StepError::Cost(e)) => Err(e),
        Err(StepError::Budget(_)) => unreachable!("unbounded evaluator"),
    }
}

/// Simplex around `warm_start`, iterated until the budget runs out or the
/// scale drops below `min_scale`. Returns the best point ever evaluated.
pub fn optimize_sso<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    warm_start: &[f64],
    cfg: &SsoConfig,
    budget: &OptimizeBudget,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    check_start(warm_start)?;
    let basis = PositiveBasis::new(warm_start.len());
    let mut ev = Evaluator::new(costfn, budget.max_cost_evals, warm_start);
    let mut iterations = 0;
    let termination = 'run: {
        let mut s = match build_simplex(&mut ev, warm_start, None, cfg.initial_scale, Phase::Init) {
            Ok(s) => s,
            Err(StepError::Budget(_)) => break 'run Termination::EvalBudget,
            Err(StepError::Cost(e)) => return Err(e),
        };
        loop {
            if s.h < cfg.min_scale {
                break 'run Termination::ScaleUnderflow;
            }
            if iterations >= budget.max_iterations {
                break 'run Termination::IterationBudget;
            }
            iterations += 1;
            ev.iter = iterations;
            match sso_step_inner(&mut s, &mut ev, &basis, cfg) {
                Ok(()) => {}
                Err(StepError::Budget(_)) => break 'run Termination::EvalBudget,
                Err(StepError::Cost(e)) => return Err(e),
            }
        }
    };
    Ok(finish(ev, iterations, termination))
}

fn check_start(u: &[f64]) -> Result<()> {
    if u.is_empty() || u.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("start point {u:?} outside [0,1]^n")));
    }
    Ok(())
}

fn finish<F>(ev: Evaluator<'_, F>, iterations: usize, termination: Termination) -> OptimizeResult {
    OptimizeResult {
        best: ev.best_u,
        best_cost: ev.best,
        evals: ev.trace.rows.len(),
        iterations,
        termination,
        trace: ev.trace,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            initial_step: 0.1,
            min_step: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveGridConfig {
    pub base_step: f64,
    pub gain: f64,
    pub threshold: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for AdaptiveGridConfig {
    fn default() -> Self {
        AdaptiveGridConfig {
            base_step: 0.05,
            gain: 20.0,
            threshold: 0.05,
            max_step: 0.25,
            min_step: 1e-3,
        }
    }
}

impl AdaptiveGridConfig {
    /// `clamp(base (1 + gain max(0, J - threshold)), base, max_step)`.
    pub fn step_for(&self, j_center: f64, base: f64) -> f64 {
        (base * (1.0 + self.gain * (j_center - self.threshold).max(0.0))).clamp(base, self.max_step.max(base))
    }
}

/// Offsets `{-1, 0, 1}^n` without the origin, in a fixed order.
pub fn neighbor_offsets(n: usize) -> Vec<Vec<i8>> {
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let d = (idx % 3) as i8 - 1;
                    idx /= 3;
                    d
                })
                .collect::<Vec<i8>>()
        })
        .filter(|o| o.iter().any(|d| *d != 0))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStep {
    pub center: Vec<f64>,
    pub center_cost: f64,
    pub step: f64,
    pub improved: bool,
    pub evals: usize,
}

fn grid_step_inner<F: FnMut(&[f64]) -> Result<f64>>(
    ev: &mut Evaluator<'_, F>,
    center: &[f64],
    center_cost: f64,
    step: f64,
) -> std::result::Result<(Vec<f64>, f64, bool), StepError> {
    ev.anchor = center_cost;
    let mut best = (center.to_vec(), center_cost);
    let mut best_row = None;
    for off in neighbor_offsets(center.len()) {
        let mut u: Vec<f64> = center.iter().zip(&off).map(|(c, d)| c + step * *d as f64).collect();
        clamp_unit(&mut u);
        let j = ev.eval(&u, Phase::Grid, step)?;
        if j < best.1 {
            best = (u, j);
            best_row = Some(ev.trace.rows.len() - 1);
        }
    }
    if let Some(i) = best_row {
        ev.trace.rows[i].accepted = true;
    }
    let improved = best_row.is_some();
    Ok((best.0, best.1, improved))
}

/// Evaluate all `3^n - 1` neighbours at `step`; move to the best one if it
/// improves on the centre, otherwise halve the step.
pub fn grid_search_step<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    center: &[f64],
    center_cost: f64,
    step: f64,
) -> Result<GridStep> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {step}")));
    }
    let mut ev = Evaluator::new(costfn, usize::MAX, center);
    match grid_step_inner(&mut ev, center, center_cost, step) {
        Ok((c, j, improved)) => Ok(GridStep {
            center: c,
            center_cost: j,
            step: if improved { step } else { 0.5 * step },
            improved,
            evals: ev.evals(),
        }),
        Err(StepError::Cost(e)) => Err(e),
        Err(StepError::Budget(_)) => unreachable!("unbounded evaluator"),
    }
}

/// One adaptive-grid iteration: the step follows the centre cost, then a
/// plain grid step at that size. On failure the base step is halved.
pub fn adaptive_grid_search_step<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    center: &[f64],
    center_cost: f64,
    base_step: f64,
    cfg: &AdaptiveGridConfig,
) -> Result<GridStep> {
    let step = cfg.step_for(center_cost, base_step);
    let mut r = grid_search_step(costfn, center, center_cost, step)?;
    r.step = if r.improved { base_step } else { 0.5 * base_step };
    Ok(r)
}

fn run_grid<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    start: &[f64],
    budget: &OptimizeBudget,
    initial: f64,
    min_step: f64,
    step_of: impl Fn(f64, f64) -> f64,
) -> Result<OptimizeResult> {
    check_start(start)?;
    let mut ev = Evaluator::new(costfn, budget.max_cost_evals, start);
    let mut iterations = 0;
    let termination = 'run: {
        let mut center = start.to_vec();
        let mut cost = match ev.eval(start, Phase::Init, initial) {
            Ok(j) => j,
            Err(StepError::Budget(_)) => break 'run Termination::EvalBudget,
            Err(StepError::Cost(e)) => return Err(e),
        };
        ev.mark_accepted();
        let mut base = initial;
        loop {
            if base < min_step {
                break 'run Termination::ScaleUnderflow;
            }
            if iterations >= budget.max_iterations {
                break 'run Termination::IterationBudget;
            }
            iterations += 1;
            ev.iter = iterations;
            let step = step_of(cost, base);
            match grid_step_inner(&mut ev, &center, cost, step) {
                Ok((c, j, improved)) => {
                    center = c;
                    cost = j;
                    if !improved {
                        base *= 0.5;
                    }
                }
                Err(StepError::Budget(_)) => break 'run Termination::EvalBudget,
                Err(StepError::Cost(e)) => return Err(e),
            }
        }
    };
    Ok(finish(ev, iterations, termination))
}

pub fn optimize_grid<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    start: &[f64],
    cfg: &GridConfig,
    budget: &OptimizeBudget,
) -> Result<OptimizeResult> {
    run_grid(costfn, start, budget, cfg.initial_step, cfg.min_step, |_, base| base)
}

pub fn optimize_adaptive_grid<F: FnMut(&[f64]) -> Result<f64>>(
    costfn: &mut F,
    start: &[f64],
    cfg: &AdaptiveGridConfig,
    budget: &OptimizeBudget,
) -> Result<OptimizeResult> {
    let c = *cfg;
    run_grid(costfn, start, budget, cfg.base_step, cfg.min_step, move |j, base| c.step_for(j, base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(c: Vec<f64>) -> impl FnMut(&[f64]) -> Result<f64> {
        move |u: &[f64]| Ok(u.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum())
    }

    fn simplex_of(vertices: Vec<Vec<f64>>, f: &mut impl FnMut(&[f64]) -> Result<f64>, h: f64) -> Simplex {
        let costs = vertices.iter().map(|v| f(v).unwrap()).collect();
        let mut s = Simplex {
            vertices,
            costs,
            h,
            poll_index: None,
            eval_count: 0,
        };
        s.sort();
        s
    }

    #[test]
    fn centroid_examples() {
        let mut f = |u: &[f64]| Ok(u[1]);
        let s = simplex_of(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &mut f, 0.1);
        assert_eq!(s.vertices[2], vec![0.0, 1.0]);
        assert_eq!(centroid(&s), vec![0.5, 0.0]);
        let mut g = |u: &[f64]| Ok(u[0]);
        let s1 = simplex_of(vec![vec![0.2], vec![0.7]], &mut g, 0.1);
        assert_eq!(centroid(&s1), vec![0.2]);
        let s2 = simplex_of(vec![vec![0.3, 0.3]; 3], &mut f, 0.1);
        assert_eq!(centroid(&s2), vec![0.3, 0.3]);
    }

    #[test]
    fn reflection_on_quadratic_bowl() {
        let mut f = sphere(vec![0.5, 0.5]);
        let mut s = simplex_of(vec![vec![0.2, 0.2], vec![0.3, 0.2], vec![0.2, 0.3]], &mut f, 0.1);
        assert_eq!(s.vertices[2], vec![0.2, 0.2]);
        let c = centroid(&s);
        let ur = affine(&c, &s.vertices[2], 1.0);
        assert!((ur[0] - 0.3).abs() < 1e-15 && (ur[1] - 0.3).abs() < 1e-15);
        // J(0.3,0.3) = 0.08 < J0 = 0.13 - 1e-4*0.01
        sso_step(&mut s, &mut f, &SsoConfig::default()).unwrap();
        assert!(s.costs[0] < 0.13 - 1e-6);
        assert!(s.is_sorted());
        assert!(s.eval_count <= 3);
    }

    #[test]
    fn constant_cost_shrinks_after_full_poll() {
        let mut f = |_: &[f64]| Ok(1.0);
        let mut s = simplex_of(axis_vertices(&[0.5, 0.5], 0.1), &mut f, 0.1);
        let cfg = SsoConfig::default();
        // Failed transform + poll 0, then polls 1 and 2 (the last one shrinks).
        sso_step(&mut s, &mut f, &cfg).unwrap();
        assert_eq!(s.h, 0.1);
        sso_step(&mut s, &mut f, &cfg).unwrap();
        assert_eq!(s.h, 0.1);
        sso_step(&mut s, &mut f, &cfg).unwrap();
        assert_eq!(s.h, 0.05);
        assert_eq!(s.poll_index, None);
    }

    #[test]
    fn zero_budget_returns_warm_start() {
        let mut f = sphere(vec![0.6, 0.4, 0.5]);
        let r = optimize_sso(&mut f, &[0.25, 0.25, 0.25], &SsoConfig::default(), &OptimizeBudget::evals(0)).unwrap();
        assert_eq!(r.best, vec![0.25, 0.25, 0.25]);
        assert_eq!(r.evals, 0);
        assert_eq!(r.termination, Termination::EvalBudget);
    }

    #[test]
    fn tps_simplex_has_four_vertices() {
        let mut f = sphere(vec![0.6, 0.4, 0.5]);
        let r = optimize_sso(&mut f, &[0.25, 0.25, 0.25], &SsoConfig::default(), &OptimizeBudget::iterations(0)).unwrap();
        assert_eq!(r.evals, 4);
        assert!(r.trace.rows.iter().all(|row| row.phase == Phase::Init));
    }

    #[test]
    fn sphere_converges_within_two_hundred_evals() {
        let mut f = sphere(vec![0.6, 0.4, 0.5]);
        let r = optimize_sso(&mut f, &[0.25, 0.25, 0.25], &SsoConfig::default(), &OptimizeBudget::evals(200)).unwrap();
        assert!(r.best_cost < 1e-6, "{}", r.best_cost);
    }

    #[test]
    fn grid_neighbor_counts() {
        assert_eq!(neighbor_offsets(1).len(), 2);
        assert_eq!(neighbor_offsets(2).len(), 8);
        assert_eq!(neighbor_offsets(3).len(), 26);
        let mut f = sphere(vec![0.5, 0.5, 0.5]);
        let r = grid_search_step(&mut f, &[0.5, 0.5, 0.5], 0.0, 0.01).unwrap();
        assert_eq!(r.evals, 26);
        assert!(!r.improved);
        assert_eq!(r.step, 0.005);
        assert_eq!(r.center, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn adaptive_step_clamps() {
        let cfg = AdaptiveGridConfig::default();
        assert_eq!(cfg.step_for(0.0, 0.05), 0.05);
        assert_eq!(cfg.step_for(cfg.threshold, 0.05), 0.05);
        assert_eq!(cfg.step_for(1e6, 0.05), 0.25);
    }

    #[test]
    fn trace_csv_shape() {
        let mut f = sphere(vec![0.6, 0.4]);
        let r = optimize_sso(&mut f, &[0.25, 0.25], &SsoConfig::default(), &OptimizeBudget::evals(10)).unwrap();
        let csv = r.trace.to_csv();
        assert!(csv.starts_with("iter,eval,u0,u1,J,phase,h,j0,accepted\n"));
        assert_eq!(csv.lines().count(), 11);
    }

    #[test]
    fn positive_basis_spans() {
        let b = PositiveBasis::new(3);
        let v = [0.3, -0.7, 0.1];
        let c = b.decompose(&v);
        assert!(c.iter().all(|x| *x >= 0.0));
        for i in 0..3 {
            let s: f64 = b.directions.iter().zip(&c).map(|(d, ci)| d[i] * ci).sum();
            assert!((s - v[i]).abs() < 1e-12);
        }
    }

    fn quad(u: &[f64]) -> Result<f64> {
        // Ill-conditioned rotated quadratic with minimum inside the box.
        let x = u[0] - 0.3;
        let y = u[1] - 0.7;
        Ok(50.0 * (x + y).powi(2) + 0.5 * (x - y).powi(2))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sso_invariants_hold(
            start in prop::collection::vec(0.0f64..1.0, 2),
            budget in 1usize..300,
        ) {
            let mut f = quad;
            let cfg = SsoConfig::default();
            let r = optimize_sso(&mut f, &start, &cfg, &OptimizeBudget::evals(budget)).unwrap();
            prop_assert!(r.evals <= budget);
            // Box feasibility and monotone best.
            for row in &r.trace.rows {
                prop_assert!(row.u.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let best = r.trace.best_so_far();
            prop_assert!(best.windows(2).all(|w| w[1] <= w[0]));
            // Sufficient decrease on every accepted transformation or poll.
            for row in r.trace.rows.iter().filter(|r| r.accepted && matches!(r.phase, Phase::Reflect | Phase::Expand | Phase::Contract | Phase::Poll)) {
                prop_assert!(row.j <= row.j0 - cfg.sigma * row.h * row.h);
            }
            // Scale changes only by rho.
            let hs: Vec<f64> = r.trace.rows.iter().map(|r| r.h).collect();
            for w in hs.windows(2) {
                prop_assert!(w[1] == w[0] || w[1] == w[0] * cfg.rho);
            }
            // Linear evaluation count per iteration.
            prop_assert!(r.trace.evals_per_iteration().iter().all(|c| *c <= 4));
        }

        #[test]
        fn grid_evaluations_are_exponential(n in 1usize..=3, seed in 0.0f64..1.0) {
            let c = vec![seed; n];
            let mut f = sphere(c);
            let start = vec![0.25; n];
            let r = optimize_grid(&mut f, &start, &GridConfig::default(), &OptimizeBudget::iterations(5)).unwrap();
            prop_assert!(r.trace.evals_per_iteration().iter().all(|k| *k == 3usize.pow(n as u32) - 1));
            let best = r.trace.best_so_far();
            prop_assert!(best.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
