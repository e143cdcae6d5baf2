//! Offline increment look-up table and online matrix assembly.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{BaseModel, SwitchGain};
use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::switch_state::SwitchState;

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementLut {
    pub entries: BTreeMap<SwitchState, DMatrix<f64>>,
    pub reachable_states: Vec<SwitchState>,
}

/// `K(s)` diagonal for a state.
pub fn k_diagonal(template: &[SwitchGain], s: &SwitchState) -> Vec<f64> {
    template
        .iter()
        .zip(s.bits())
        .map(|(g, on)| g.select(*on))
        .collect()
}

/// `M_s = Bs (I - K(s) Fs)^{-1}`, computed through the transposed solve.
fn increment_matrix(base: &BaseModel, s: &SwitchState) -> Result<DMatrix<f64>> {
    let n = base.switch_count();
    let k = k_diagonal(&base.k_template, s);
    let mut lhs = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] -= k[i] * base.fs[(i, j)];
        }
    }
    // M (I - K Fs) = Bs  <=>  (I - K Fs)^T M^T = Bs^T
    let mt = linalg::solve(&lhs.transpose(), &base.bs.transpose())
        .ok_or_else(|| Error::SingularSwitchState(s.to_string()))?;
    Ok(mt.transpose())
}

pub fn precompute_lut(base: &BaseModel, states: &[SwitchState]) -> Result<IncrementLut> {
    let n = base.switch_count();
    if let Some(bad) = states.iter().find(|s| s.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "state {bad} has length {} but the netlist has {n} switches",
            bad.len()
        )));
    }
    let mut reachable: Vec<SwitchState> = Vec::with_capacity(states.len());
    for s in states {
        if !reachable.contains(s) {
            reachable.push(s.clone());
        }
    }
    let computed: Vec<Result<(SwitchState, DMatrix<f64>)>> = reachable
        .par_iter()
        .map(|s| increment_matrix(base, s).map(|m| (s.clone(), m)))
        .collect();
    let mut entries = BTreeMap::new();
    for r in computed {
        let (s, m) = r?;
        entries.insert(s, m);
    }
    Ok(IncrementLut {
        entries,
        reachable_states: reachable,
    })
}

/// Constant-coefficient dynamics of one switching state: `dx/dt = a x + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub a: DMatrix<f64>,
    pub f: DVector<f64>,
}

/// Anything that can hand out per-state linear dynamics.
pub trait SwitchedSystem: Sync {
    fn state_dim(&self) -> usize;
    fn segment(&self, s: &SwitchState) -> Result<&Segment>;
}

/// The compiled digital twin: base matrices, increment LUT and the nominal inputs.
#[derive(Clone, Debug)]
pub struct PiecewiseModel {
    pub base: BaseModel,
    pub lut: IncrementLut,
    segments: BTreeMap<SwitchState, Segment>,
}

impl PiecewiseModel {
    pub fn new(base: BaseModel, lut: IncrementLut) -> Result<Self> {
        let u = DVector::from_vec(base.input_values.clone());
        let mut segments = BTreeMap::new();
        for (s, m) in &lut.entries {
            let a = assemble(&base, m, s);
            let b = assemble_input(&base, m, s);
            if !linalg::is_finite(&a) || !linalg::is_finite(&b) {
                return Err(Error::SingularSwitchState(s.to_string()));
            }
            segments.insert(s.clone(), Segment { f: &b * &u, a });
        }
        Ok(PiecewiseModel {
            base,
            lut,
            segments,
        })
    }

    /// `A_s = A0 + M_s K(s) E`.
    pub fn assemble_a(&self, s: &SwitchState) -> Result<DMatrix<f64>> {
        let m = self.increment(s)?;
        Ok(assemble(&self.base, m, s))
    }

    /// `B_s = B0 + M_s K(s) G`.
    pub fn assemble_b(&self, s: &SwitchState) -> Result<DMatrix<f64>> {
        let m = self.increment(s)?;
        Ok(assemble_input(&self.base, m, s))
    }

    pub fn increment(&self, s: &SwitchState) -> Result<&DMatrix<f64>> {
        self.lut
            .entries
            .get(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))
    }

    pub fn input_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.base.input_values.clone())
    }

    pub fn to_document(&self) -> ModelDocument {
        let b = &self.base;
        ModelDocument {
            version: MODEL_FORMAT_VERSION,
            state_labels: b.state_labels.clone(),
            input_labels: b.input_labels.clone(),
            input_values: b.input_values.clone(),
            switch_labels: b.switch_labels.clone(),
            a0: rows::to_rows(&b.a0),
            b0: rows::to_rows(&b.b0),
            bs: rows::to_rows(&b.bs),
            e: rows::to_rows(&b.e),
            fs: rows::to_rows(&b.fs),
            g: rows::to_rows(&b.g),
            base_conductance: b.base_conductance.clone(),
            k_on: b.k_template.iter().map(|k| k.on).collect(),
            k_off: b.k_template.iter().map(|k| k.off).collect(),
            lut: self
                .lut
                .reachable_states
                .iter()
                .map(|s| LutRecord {
                    state: s.clone(),
                    m: rows::to_rows(&self.lut.entries[s]),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let m = doc.state_labels.len();
        let p = doc.input_labels.len();
        let n = doc.switch_labels.len();
        let mat = |r: &[Vec<f64>], nrows: usize, ncols: usize, what: &str| -> Result<DMatrix<f64>> {
            let out = rows::from_rows(r, ncols).map_err(Error::Config)?;
            if out.shape() != (nrows, ncols) {
                return Err(Error::Config(format!(
                    "{what} has shape {:?}, expected ({nrows}, {ncols})",
                    out.shape()
                )));
            }
            Ok(out)
        };
        if doc.k_on.len() != n || doc.k_off.len() != n || doc.base_conductance.len() != n {
            return Err(Error::Config("switch gain arrays do not match switch count".into()));
        }
        let base = BaseModel {
            state_labels: doc.state_labels.clone(),
            input_labels: doc.input_labels.clone(),
            input_values: doc.input_values.clone(),
            switch_labels: doc.switch_labels.clone(),
            a0: mat(&doc.a0, m, m, "A0")?,
            b0: mat(&doc.b0, m, p, "B0")?,
            bs: mat(&doc.bs, m, n, "Bs")?,
            e: mat(&doc.e, n, m, "E")?,
            fs: mat(&doc.fs, n, n, "Fs")?,
            g: mat(&doc.g, n, p, "G")?,
            base_conductance: doc.base_conductance.clone(),
            k_template: doc
                .k_on
                .iter()
                .zip(&doc.k_off)
                .map(|(on, off)| SwitchGain { on: *on, off: *off })
                .collect(),
        };
        let mut entries = BTreeMap::new();
        let mut reachable = Vec::new();
        for rec in &doc.lut {
            entries.insert(rec.state.clone(), mat(&rec.m, m, n, "M")?);
            reachable.push(rec.state.clone());
        }
        PiecewiseModel::new(
            base,
            IncrementLut {
                entries,
                reachable_states: reachable,
            },
        )
    }
}

impl SwitchedSystem for PiecewiseModel {
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn segment(&self, s: &SwitchState) -> Result<&Segment> {
        self.segments
            .get(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))
    }
}

/// `M K X` with `K` applied as a column scaling of `M`.
fn scaled_product(base: &BaseModel, m: &DMatrix<f64>, s: &SwitchState, x: &DMatrix<f64>) -> DMatrix<f64> {
    let k = k_diagonal(&base.k_template, s);
    let mut mk = m.clone();
    for (j, kj) in k.iter().enumerate() {
        mk.column_mut(j).scale_mut(*kj);
    }
    mk * x
}

fn assemble(base: &BaseModel, m: &DMatrix<f64>, s: &SwitchState) -> DMatrix<f64> {
    &base.a0 + scaled_product(base, m, s, &base.e)
}

fn assemble_input(base: &BaseModel, m: &DMatrix<f64>, s: &SwitchState) -> DMatrix<f64> {
    &base.b0 + scaled_product(base, m, s, &base.g)
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutRecord {
    pub state: SwitchState,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
}

/// JSON form of a compiled model. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub input_values: Vec<f64>,
    pub switch_labels: Vec<String>,
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(rename = "B0")]
    pub b0: Vec<Vec<f64>>,
    #[serde(rename = "Bs")]
    pub bs: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "Fs")]
    pub fs: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub base_conductance: Vec<f64>,
    pub k_on: Vec<f64>,
    pub k_off: Vec<f64>,
    pub lut: Vec<LutRecord>,
}

/// Constant dynamics shared by every switching state; handy for solver tests.
#[derive(Clone, Debug)]
pub struct LtiSystem {
    segment: Segment,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, f: DVector<f64>) -> Self {
        LtiSystem {
            segment: Segment { a, f },
        }
    }
}

impl SwitchedSystem for LtiSystem {
    fn state_dim(&self) -> usize {
        self.segment.a.nrows()
    }

    fn segment(&self, _s: &SwitchState) -> Result<&Segment> {
        Ok(&self.segment)
    }
}

/// Fixed per-state dynamics, for tests and hand-built systems.
#[derive(Clone, Debug, Default)]
pub struct TableSystem {
    pub dim: usize,
    pub segments: BTreeMap<SwitchState, Segment>,
}

impl SwitchedSystem for TableSystem {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn segment(&self, s: &SwitchState) -> Result<&Segment> {
        self.segments
            .get(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_netlist, synthesize_base, synthesize_base_with};

    fn one_switch_rl() -> BaseModel {
        synthesize_base(&parse_netlist(".gnd 0\nV1 a 0 10\nR1 a b 2\nL1 b 0 1m\nS1 b 0 goff=0").unwrap())
            .unwrap()
    }

    #[test]
    fn single_switch_two_entries() {
        let base = one_switch_rl();
        let states = [SwitchState::from_mask(0, 1), SwitchState::from_mask(1, 1)];
        let lut = precompute_lut(&base, &states).unwrap();
        assert_eq!(lut.entries.len(), 2);
        assert_eq!(lut.reachable_states, states.to_vec());
    }

    #[test]
    fn zero_gain_state_returns_bs() {
        let base = one_switch_rl();
        let off = SwitchState::all_off(1);
        let lut = precompute_lut(&base, &[off.clone()]).unwrap();
        assert_eq!(lut.entries[&off], base.bs);
        let model = PiecewiseModel::new(base.clone(), lut).unwrap();
        assert_eq!(model.assemble_a(&off).unwrap(), base.a0);
    }

    #[test]
    fn switch_on_matches_resynthesis() {
        let net = parse_netlist(".gnd 0\nV1 a 0 10\nR1 a b 2\nL1 b 0 1m\nS1 b 0 goff=0").unwrap();
        let base = synthesize_base(&net).unwrap();
        let on = SwitchState::from_mask(1, 1);
        let model = PiecewiseModel::new(base.clone(), precompute_lut(&base, &[on.clone()]).unwrap()).unwrap();
        let direct = synthesize_base_with(&net, &[1e3]).unwrap();
        let a = model.assemble_a(&on).unwrap();
        assert!(linalg::max_rel_diff(&a, &direct.a0, 1e-300) < 1e-9);
        let b = model.assemble_b(&on).unwrap();
        assert!(linalg::max_rel_diff(&b, &direct.b0, 1e-300) < 1e-9);
    }

    #[test]
    fn unknown_state_is_an_error() {
        let base = one_switch_rl();
        let model = PiecewiseModel::new(base.clone(), precompute_lut(&base, &[SwitchState::all_off(1)]).unwrap()).unwrap();
        let err = model.assemble_a(&SwitchState::from_mask(1, 1)).unwrap_err();
        assert!(matches!(err, Error::UnknownState(s) if s == "1"));
    }

    #[test]
    fn wrong_length_state_rejected() {
        let base = one_switch_rl();
        assert!(precompute_lut(&base, &[SwitchState::all_off(2)]).is_err());
    }

    #[test]
    fn document_round_trip() {
        let base = one_switch_rl();
        let states = [SwitchState::from_mask(0, 1), SwitchState::from_mask(1, 1)];
        let model = PiecewiseModel::new(base.clone(), precompute_lut(&base, &states).unwrap()).unwrap();
        let doc = model.to_document();
        let text = serde_json::to_string(&doc).unwrap();
        let back = PiecewiseModel::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.base, model.base);
        assert_eq!(back.lut, model.lut);
    }
}
