//! The neural surrogate predictor: forward Euler plus a learned per-state residual.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{euler_segment, ResidualDataset, Sample};
use super::net::{Adam, AdamConfig, FeedForwardNet, LayerDocument, Workspace};
use crate::error::{Error, Result};
use crate::modulation::SwitchTimeline;
use crate::netlist::SwitchedSystem;
use crate::SwitchState;

pub const NSP_FORMAT_VERSION: u32 = 1;

/// Affine feature scaling `z = (v - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Norm {
    pub fn identity(n: usize) -> Self {
        Norm {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Column means and standard deviations; near-constant columns get scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for i in 0..n {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = (0..n)
            .map(|i| {
                let var = (sq[i] / c - mean[i] * mean[i]).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-12 * mean[i].abs().max(1e-300) && sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Norm { mean, scale }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// Network and feature scaling for one switching state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateNet {
    pub net: FeedForwardNet,
    pub input_norm: Norm,
    pub output_norm: Norm,
}

impl StateNet {
    /// Raw network input: the state followed by `h / step_reference`.
    fn features(x: &[f64], h: f64, step_reference: f64) -> Vec<f64> {
        let mut f = x.to_vec();
        f.push(h / step_reference);
        f
    }

    /// Euler's local error is second order, so the network predicts the
    /// residual divided by `(h / step_reference)^2`.
    fn target_scale(h: f64, step_reference: f64) -> f64 {
        (h / step_reference).powi(2)
    }

    fn residual(&self, x: &[f64], h: f64, step_reference: f64) -> Vec<f64> {
        let z = self.input_norm.normalize(&Self::features(x, h, step_reference));
        let k = Self::target_scale(h, step_reference);
        self.output_norm
            .denormalize(&self.net.forward(&z))
            .into_iter()
            .map(|v| v * k)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NspModel {
    pub layer_widths: Vec<usize>,
    pub nets: BTreeMap<SwitchState, StateNet>,
    /// Segment-duration scale used to build the `h` feature.
    pub step_reference: f64,
    pub provenance: String,
}

/// Result of chaining the predictor over one period.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclePrediction {
    pub x_end: DVector<f64>,
    /// State at the start of every segment, then the end state.
    pub segment_states: Vec<DVector<f64>>,
    pub switch_states: Vec<SwitchState>,
    pub net_evaluations: usize,
}

impl NspModel {
    /// All-zero networks with identity scaling: reproduces chained Euler exactly.
    pub fn zeroed(states: &[SwitchState], hidden: &[usize], state_dim: usize, step_reference: f64) -> Result<Self> {
        let widths = layer_widths(state_dim, hidden);
        let mut nets = BTreeMap::new();
        for s in states {
            nets.insert(
                s.clone(),
                StateNet {
                    net: FeedForwardNet::zeros(&widths)?,
                    input_norm: Norm::identity(state_dim + 1),
                    output_norm: Norm::identity(state_dim),
                },
            );
        }
        Ok(NspModel {
            layer_widths: widths,
            nets,
            step_reference,
            provenance: String::new(),
        })
    }

    pub fn state_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }

    /// Euler step plus the learned residual for one segment.
    pub fn predict_segment(
        &self,
        sys: &dyn SwitchedSystem,
        x: &DVector<f64>,
        s: &SwitchState,
        h: f64,
    ) -> Result<DVector<f64>> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("segment duration must be positive, got {h}")));
        }
        let sn = self.nets.get(s).ok_or_else(|| Error::UnknownState(s.to_string()))?;
        let fe = euler_segment(sys, s, x, h)?;
        let r = sn.residual(x.as_slice(), h, self.step_reference);
        Ok(fe + DVector::from_vec(r))
    }

    /// Chain [`NspModel::predict_segment`] across one period of `tl`.
    pub fn predict_cycle(&self, sys: &dyn SwitchedSystem, tl: &SwitchTimeline, x0: &DVector<f64>) -> Result<CyclePrediction> {
        let mut x = x0.clone();
        let mut out = CyclePrediction {
            x_end: x0.clone(),
            segment_states: Vec::with_capacity(tl.events.len() + 1),
            switch_states: Vec::with_capacity(tl.events.len()),
            net_evaluations: 0,
        };
        for i in 0..tl.events.len() {
            let h = tl.segment_duration(i);
            let s = tl.resolved_state(i, x.as_slice());
            out.segment_states.push(x.clone());
            if h > 0.0 {
                x = self.predict_segment(sys, &x, &s, h)?;
                out.net_evaluations += 1;
            }
            out.switch_states.push(s);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { time: tl.period });
        }
        out.segment_states.push(x.clone());
        out.x_end = x;
        Ok(out)
    }

    pub fn to_document(&self) -> NspDocument {
        NspDocument {
            version: NSP_FORMAT_VERSION,
            layer_widths: self.layer_widths.clone(),
            step_reference: self.step_reference,
            provenance: self.provenance.clone(),
            nets: self
                .nets
                .iter()
                .map(|(s, n)| NetRecord {
                    state: s.clone(),
                    input_norm: n.input_norm.clone(),
                    output_norm: n.output_norm.clone(),
                    layers: n.net.to_layers(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &NspDocument) -> Result<Self> {
        if doc.version != NSP_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported NSP format version {} (expected {NSP_FORMAT_VERSION})",
                doc.version
            )));
        }
        let m = *doc.layer_widths.last().unwrap_or(&0);
        if doc.layer_widths.first() != Some(&(m + 1)) {
            return Err(Error::Config("NSP input width must be state dimension + 1".into()));
        }
        let mut nets = BTreeMap::new();
        for r in &doc.nets {
            let ok = |n: &Norm, w: usize| n.mean.len() == w && n.scale.len() == w && n.scale.iter().all(|s| *s > 0.0);
            if !ok(&r.input_norm, m + 1) || !ok(&r.output_norm, m) {
                return Err(Error::Config(format!("bad normalisation for state {}", r.state)));
            }
            nets.insert(
                r.state.clone(),
                StateNet {
                    net: FeedForwardNet::from_layers(&doc.layer_widths, &r.layers)?,
                    input_norm: r.input_norm.clone(),
                    output_norm: r.output_norm.clone(),
                },
            );
        }
        Ok(NspModel {
            layer_widths: doc.layer_widths.clone(),
            nets,
            step_reference: doc.step_reference,
            provenance: doc.provenance.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("NSP documents always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub state: SwitchState,
    pub input_norm: Norm,
    pub output_norm: Norm,
    pub layers: Vec<LayerDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NspDocument {
    pub version: u32,
    pub layer_widths: Vec<usize>,
    pub step_reference: f64,
    pub provenance: String,
    pub nets: Vec<NetRecord>,
}

/// Surrogates trained per load resistance. The networks only see the state
/// and the segment duration, so the load is selected here instead.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NspBank {
    entries: BTreeMap<u64, NspModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub load_ohms: f64,
    pub model: NspDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NspBankDocument {
    pub version: u32,
    pub entries: Vec<BankRecord>,
}

impl NspBank {
    pub fn insert(&mut self, load_ohms: f64, model: NspModel) {
        self.entries.insert(load_ohms.to_bits(), model);
    }

    pub fn get(&self, load_ohms: f64) -> Result<&NspModel> {
        self.entries.get(&load_ohms.to_bits()).ok_or_else(|| {
            Error::InvalidArgument(format!("no surrogate trained for load {load_ohms} ohm"))
        })
    }

    pub fn loads(&self) -> Vec<f64> {
        self.entries.keys().map(|k| f64::from_bits(*k)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = NspBankDocument {
            version: NSP_FORMAT_VERSION,
            entries: self
                .entries
                .iter()
                .map(|(k, m)| BankRecord {
                    load_ohms: f64::from_bits(*k),
                    model: m.to_document(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("NSP documents always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NspBankDocument = serde_json::from_str(text)?;
        if doc.version != NSP_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported NSP bank version {}", doc.version)));
        }
        let mut bank = NspBank::default();
        for r in &doc.entries {
            bank.insert(r.load_ohms, NspModel::from_document(&r.model)?);
        }
        Ok(bank)
    }
}

/// Chained forward Euler at the event points only.
pub fn euler_cycle(sys: &dyn SwitchedSystem, tl: &SwitchTimeline, x0: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = x0.clone();
    for i in 0..tl.events.len() {
        let h = tl.segment_duration(i);
        if h > 0.0 {
            let s = tl.resolved_state(i, x.as_slice());
            x = euler_segment(sys, &s, &x, h)?;
        }
    }
    Ok(x)
}

pub fn layer_widths(state_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![state_dim + 1];
    w.extend_from_slice(hidden);
    w.push(state_dim);
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: Vec<usize>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: vec![32, 32],
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.epsilon > 0.0
            && !self.hidden.is_empty()
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("training configuration values must be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateTrainReport {
    pub state: SwitchState,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Mean training loss per epoch, in normalised units.
    pub epoch_loss: Vec<f64>,
    pub final_train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub states: Vec<StateTrainReport>,
}

impl TrainReport {
    pub fn worst_train_mse(&self) -> f64 {
        self.states.iter().map(|s| s.final_train_mse).fold(0.0, f64::max)
    }
}

/// Cycle ids held out for validation: a seeded `validation_fraction` of all cycles.
fn validation_cycles(ds: &ResidualDataset, cfg: &TrainConfig) -> BTreeSet<usize> {
    let mut cycles: Vec<usize> = ds.samples.iter().map(|s| s.cycle).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Per-state training uses streams keyed by the state mask; keep clear of them.
    rng.set_stream(u64::MAX);
    cycles.shuffle(&mut rng);
    let n_val = (cycles.len() as f64 * cfg.validation_fraction).floor() as usize;
    cycles.into_iter().take(n_val).collect()
}

fn encode(samples: &[&Sample], step_reference: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    samples
        .iter()
        .map(|s| {
            let k = StateNet::target_scale(s.h, step_reference);
            (
                StateNet::features(&s.x, s.h, step_reference),
                s.residual.iter().map(|r| r / k).collect(),
            )
        })
        .unzip()
}

fn train_state(
    state: &SwitchState,
    train: &[&Sample],
    val: &[&Sample],
    widths: &[usize],
    step_reference: f64,
    cfg: &TrainConfig,
) -> Result<(StateNet, StateTrainReport)> {
    let m = widths[widths.len() - 1];
    let (raw_x, raw_y) = encode(train, step_reference);
    let input_norm = Norm::fit(raw_x.iter().map(|r| r.as_slice()), m + 1);
    let output_norm = Norm::fit(raw_y.iter().map(|r| r.as_slice()), m);
    let xs: Vec<Vec<f64>> = raw_x.iter().map(|r| input_norm.normalize(r)).collect();
    let ys: Vec<Vec<f64>> = raw_y.iter().map(|r| output_norm.normalize(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(state.mask());
    let mut net = FeedForwardNet::random(widths, &mut rng)?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        },
        net.param_count(),
    );
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad = Vec::new();
    let mut ws = Workspace::default();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let it = batch.iter().map(|&i| (xs[i].as_slice(), ys[i].as_slice()));
            let loss = net.mse_and_grad(it, &mut grad, &mut ws);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence {
                    epoch,
                    state: state.to_string(),
                });
            }
            total += loss * batch.len() as f64;
            adam.step(net.params_mut(), &grad);
        }
        epoch_loss.push(if xs.is_empty() { 0.0 } else { total / xs.len() as f64 });
    }
    if !net.params().iter().all(|p| p.is_finite()) {
        return Err(Error::TrainingDivergence {
            epoch: cfg.epochs,
            state: state.to_string(),
        });
    }
    let final_train_mse = net.mse(xs.iter().zip(&ys).map(|(a, b)| (a.as_slice(), b.as_slice())));
    let (vx, vy) = encode(val, step_reference);
    let vx: Vec<Vec<f64>> = vx.iter().map(|r| input_norm.normalize(r)).collect();
    let vy: Vec<Vec<f64>> = vy.iter().map(|r| output_norm.normalize(r)).collect();
    let validation_mse = net.mse(vx.iter().zip(&vy).map(|(a, b)| (a.as_slice(), b.as_slice())));
    Ok((
        StateNet {
            net,
            input_norm,
            output_norm,
        },
        StateTrainReport {
            state: state.clone(),
            train_samples: xs.len(),
            validation_samples: vx.len(),
            epoch_loss,
            final_train_mse,
            validation_mse,
        },
    ))
}

/// Train one network per state in `states`. Every listed state needs at
/// least one sample. Networks train in parallel; results do not depend on
/// the thread count.
pub fn train(ds: &ResidualDataset, cfg: &TrainConfig, states: &[SwitchState]) -> Result<(NspModel, TrainReport)> {
    cfg.validate()?;
    let m = ds
        .samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let widths = layer_widths(m, &cfg.hidden);
    let step_reference = ds.samples.iter().map(|s| s.h).sum::<f64>() / ds.samples.len() as f64;
    let val_cycles = validation_cycles(ds, cfg);

    let mut by_state: BTreeMap<&SwitchState, (Vec<&Sample>, Vec<&Sample>)> = BTreeMap::new();
    for s in states {
        by_state.entry(s).or_default();
    }
    for s in &ds.samples {
        if let Some(e) = by_state.get_mut(&s.state) {
            if val_cycles.contains(&s.cycle) {
                e.1.push(s);
            } else {
                e.0.push(s);
            }
        }
    }
    for (s, (tr, va)) in by_state.iter_mut() {
        if tr.is_empty() {
            // Tiny datasets may put every sample of a state in validation.
            if va.is_empty() {
                return Err(Error::InvalidArgument(format!("no samples for reachable state {s}")));
            }
            std::mem::swap(tr, va);
        }
    }
    let jobs: Vec<_> = by_state.into_iter().collect();
    let trained: Vec<Result<(StateNet, StateTrainReport)>> = jobs
        .par_iter()
        .map(|(s, (tr, va))| train_state(s, tr, va, &widths, step_reference, cfg))
        .collect();
    let mut nets = BTreeMap::new();
    let mut report = TrainReport::default();
    for ((s, _), r) in jobs.iter().zip(trained) {
        let (net, rep) = r?;
        nets.insert((*s).clone(), net);
        report.states.push(rep);
    }
    Ok((
        NspModel {
            layer_widths: widths,
            nets,
            step_reference,
            provenance: ds.provenance.clone(),
        },
        report,
    ))
}
