//! Nodal-analysis synthesis of the switched state-space model.
//!
//! Inductors are treated as current sources carrying their state current and
//! capacitors as voltage sources holding their state voltage. Every switch is
//! stamped with a base conductance plus an injected current source `w_j`; the
//! resistive network is then solved once for all right-hand sides:
//!
//! ```text
//! dx/dt = A0 x + B0 u + Bs w
//! v_sw  = E  x + G  u + Fs w
//! w     = K(s) v_sw
//! ```

use nalgebra::DMatrix;

use super::parse::{BranchKind, Netlist, NodeId};
use crate::error::{Error, Result};
use crate::linalg;

/// Fraction of the on-conductance used as the base conductance when the
/// network with every switch at its off-conductance is not solvable.
pub const FALLBACK_BASE_FRACTION: f64 = 1e-3;

/// Diagonal entries of `K(s)` for one switch: conductance increments over the base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchGain {
    pub on: f64,
    pub off: f64,
}

impl SwitchGain {
    pub fn select(&self, on: bool) -> f64 {
        if on {
            self.on
        } else {
            self.off
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    /// Nominal source values from the netlist, ordered like `input_labels`.
    pub input_values: Vec<f64>,
    pub switch_labels: Vec<String>,
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub bs: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub fs: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub base_conductance: Vec<f64>,
    pub k_template: Vec<SwitchGain>,
}

impl BaseModel {
    pub fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b0.ncols()
    }

    pub fn switch_count(&self) -> usize {
        self.k_template.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.state_labels.iter().position(|l| l == label)
    }
}

/// Synthesises the base model with every switch at its off-conductance.
///
/// When that network is singular (e.g. a bridge midpoint floats once all its
/// switches are open) the base conductance falls back to a fraction of the
/// on-conductance; `K(s)` then carries signed increments so that every switch
/// state still resolves to its physical conductance.
pub fn synthesize_base(net: &Netlist) -> Result<BaseModel> {
    let off: Vec<f64> = net
        .switches()
        .map(|b| b.switch.expect("switch params").off_conductance)
        .collect();
    match synthesize_base_with(net, &off) {
        Err(Error::SingularTopology(_)) if !off.is_empty() => {
            let fallback: Vec<f64> = net
                .switches()
                .map(|b| b.switch.expect("switch params").on_conductance * FALLBACK_BASE_FRACTION)
                .collect();
            synthesize_base_with(net, &fallback)
        }
        other => other,
    }
}

/// Synthesises the base model with explicit per-switch base conductances.
pub fn synthesize_base_with(net: &Netlist, base_conductance: &[f64]) -> Result<BaseModel> {
    let n_sw = net.switch_count();
    if base_conductance.len() != n_sw {
        return Err(Error::InvalidArgument(format!(
            "{} base conductances for {n_sw} switches",
            base_conductance.len()
        )));
    }

    // Unknown layout: non-ground node voltages, then one current per
    // voltage source, capacitor and transformer.
    let mut node_row: Vec<Option<usize>> = vec![None; net.node_count()];
    let mut rows = 0;
    for (i, slot) in node_row.iter_mut().enumerate() {
        if NodeId(i) != net.ground {
            *slot = Some(rows);
            rows += 1;
        }
    }
    let n_nodes = rows;

    let inductors: Vec<_> = net.branches.iter().filter(|b| b.kind == BranchKind::Inductor).collect();
    let capacitors: Vec<_> = net.branches.iter().filter(|b| b.kind == BranchKind::Capacitor).collect();
    let sources: Vec<_> = net
        .branches
        .iter()
        .filter(|b| matches!(b.kind, BranchKind::VoltageSource | BranchKind::CurrentSource))
        .collect();
    let m = inductors.len() + capacitors.len();
    let p = sources.len();

    let mut extra = 0;
    for b in &net.branches {
        if matches!(
            b.kind,
            BranchKind::VoltageSource | BranchKind::Capacitor | BranchKind::IdealTransformer
        ) {
            extra += 1;
        }
    }
    let dim = n_nodes + extra;

    let mut y = DMatrix::<f64>::zeros(dim, dim);
    // Right-hand side columns: [x (m) | u (p) | w (n_sw)].
    let mut rhs = DMatrix::<f64>::zeros(dim, m + p + n_sw);
    let col_x = 0;
    let col_u = m;
    let col_w = m + p;

    let stamp_g = |y: &mut DMatrix<f64>, a: NodeId, b: NodeId, g: f64| {
        let (ra, rb) = (node_row[a.0], node_row[b.0]);
        if let Some(i) = ra {
            y[(i, i)] += g;
        }
        if let Some(j) = rb {
            y[(j, j)] += g;
        }
        if let (Some(i), Some(j)) = (ra, rb) {
            y[(i, j)] -= g;
            y[(j, i)] -= g;
        }
    };
    // Unit current leaving `a` and entering `b` through the element, as an rhs column.
    let inject = |rhs: &mut DMatrix<f64>, a: NodeId, b: NodeId, col: usize, scale: f64| {
        if let Some(i) = node_row[a.0] {
            rhs[(i, col)] -= scale;
        }
        if let Some(j) = node_row[b.0] {
            rhs[(j, col)] += scale;
        }
    };

    let mut next_extra = n_nodes;
    let mut cap_row = Vec::new();
    let mut inductor_nodes = Vec::new();
    let mut switch_nodes = Vec::new();
    let (mut li, mut ci, mut si, mut wi) = (0, 0, 0, 0);

    for b in &net.branches {
        match b.kind {
            BranchKind::Resistor => stamp_g(&mut y, b.a(), b.b(), 1.0 / b.value),
            BranchKind::Switch => {
                stamp_g(&mut y, b.a(), b.b(), base_conductance[wi]);
                inject(&mut rhs, b.a(), b.b(), col_w + wi, 1.0);
                switch_nodes.push((b.a(), b.b()));
                wi += 1;
            }
            BranchKind::Inductor => {
                inject(&mut rhs, b.a(), b.b(), col_x + li, 1.0);
                inductor_nodes.push((b.a(), b.b(), b.value));
                li += 1;
            }
            BranchKind::CurrentSource => {
                inject(&mut rhs, b.a(), b.b(), col_u + si, 1.0);
                si += 1;
            }
            BranchKind::VoltageSource | BranchKind::Capacitor => {
                let k = next_extra;
                next_extra += 1;
                if let Some(i) = node_row[b.a().0] {
                    y[(i, k)] += 1.0;
                    y[(k, i)] += 1.0;
                }
                if let Some(j) = node_row[b.b().0] {
                    y[(j, k)] -= 1.0;
                    y[(k, j)] -= 1.0;
                }
                if b.kind == BranchKind::VoltageSource {
                    rhs[(k, col_u + si)] = 1.0;
                    si += 1;
                } else {
                    rhs[(k, col_x + inductors.len() + ci)] = 1.0;
                    cap_row.push((k, b.value));
                    ci += 1;
                }
            }
            BranchKind::IdealTransformer => {
                let k = next_extra;
                next_extra += 1;
                let n = b.value;
                let [p1, p2, s1, s2] = [b.nodes[0], b.nodes[1], b.nodes[2], b.nodes[3]];
                for (node, coeff) in [(p1, 1.0), (p2, -1.0), (s1, -n), (s2, n)] {
                    if let Some(i) = node_row[node.0] {
                        y[(i, k)] += coeff;
                        y[(k, i)] += coeff;
                    }
                }
            }
        }
    }

    let sol = linalg::solve(&y, &rhs).ok_or_else(|| {
        Error::SingularTopology(
            "nodal system is singular (capacitor/source loop, inductor cutset or floating node)"
                .into(),
        )
    })?;

    let volt = |z: &DMatrix<f64>, a: NodeId, b: NodeId, col: usize| -> f64 {
        let va = node_row[a.0].map_or(0.0, |i| z[(i, col)]);
        let vb = node_row[b.0].map_or(0.0, |i| z[(i, col)]);
        va - vb
    };

    let cols = m + p + n_sw;
    let mut deriv = DMatrix::<f64>::zeros(m, cols);
    for (i, (a, b, l)) in inductor_nodes.iter().enumerate() {
        for c in 0..cols {
            deriv[(i, c)] = volt(&sol, *a, *b, c) / l;
        }
    }
    for (j, (row, cap)) in cap_row.iter().enumerate() {
        for c in 0..cols {
            deriv[(inductors.len() + j, c)] = sol[(*row, c)] / cap;
        }
    }
    let mut vsw = DMatrix::<f64>::zeros(n_sw, cols);
    for (j, (a, b)) in switch_nodes.iter().enumerate() {
        for c in 0..cols {
            vsw[(j, c)] = volt(&sol, *a, *b, c);
        }
    }

    let state_labels = inductors
        .iter()
        .map(|b| format!("i_{}", b.id))
        .chain(capacitors.iter().map(|b| format!("v_{}", b.id)))
        .collect();

    let k_template = net
        .switches()
        .zip(base_conductance)
        .map(|(b, g0)| {
            let p = b.switch.expect("switch params");
            SwitchGain {
                on: p.on_conductance - g0,
                off: p.off_conductance - g0,
            }
        })
        .collect();

    Ok(BaseModel {
        state_labels,
        input_labels: sources.iter().map(|b| b.id.clone()).collect(),
        input_values: sources.iter().map(|b| b.value).collect(),
        switch_labels: net.switches().map(|b| b.id.clone()).collect(),
        a0: deriv.columns(col_x, m).into_owned(),
        b0: deriv.columns(col_u, p).into_owned(),
        bs: deriv.columns(col_w, n_sw).into_owned(),
        e: vsw.columns(col_x, m).into_owned(),
        g: vsw.columns(col_u, p).into_owned(),
        fs: vsw.columns(col_w, n_sw).into_owned(),
        base_conductance: base_conductance.to_vec(),
        k_template,
    })
}
