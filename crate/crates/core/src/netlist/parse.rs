//! Line-oriented netlist reader.
//!
//! ```text
//! # comment
//! .gnd 0
//! V1 in 0 48
//! R1 in p 10m
//! S1 p a gon=1k goff=0
//! T1 x b s1 s2 1
//! ```
//!
//! The element kind comes from the first letter of the id (V, I, R, L, C, T, S).
//! Values accept the SI suffixes `p n u m k M`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ON_CONDUCTANCE: f64 = 1e3;
pub const DEFAULT_OFF_CONDUCTANCE: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchKind {
    VoltageSource,
    CurrentSource,
    Resistor,
    Inductor,
    Capacitor,
    IdealTransformer,
    Switch,
}

impl BranchKind {
    fn from_prefix(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'V' => BranchKind::VoltageSource,
            'I' => BranchKind::CurrentSource,
            'R' => BranchKind::Resistor,
            'L' => BranchKind::Inductor,
            'C' => BranchKind::Capacitor,
            'T' => BranchKind::IdealTransformer,
            'S' => BranchKind::Switch,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchParams {
    pub on_conductance: f64,
    pub off_conductance: f64,
}

impl Default for SwitchParams {
    fn default() -> Self {
        SwitchParams {
            on_conductance: DEFAULT_ON_CONDUCTANCE,
            off_conductance: DEFAULT_OFF_CONDUCTANCE,
        }
    }
}

/// One netlist element.
///
/// Two-terminal elements carry `[a, b]`; an ideal transformer carries
/// `[primary+, primary-, secondary+, secondary-]`. `value` is ohms, henries,
/// farads, volts, amperes or the primary:secondary turns ratio. For switches it
/// mirrors the on-conductance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub kind: BranchKind,
    pub nodes: Vec<NodeId>,
    pub value: f64,
    pub switch: Option<SwitchParams>,
    pub line: usize,
}

impl Branch {
    pub fn a(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn b(&self) -> NodeId {
        self.nodes[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub branches: Vec<Branch>,
    pub node_names: Vec<String>,
    pub ground: NodeId,
}

impl Netlist {
    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.node_names[id.0]
    }

    pub fn switches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.kind == BranchKind::Switch)
    }

    pub fn switch_count(&self) -> usize {
        self.switches().count()
    }

    pub fn count(&self, kind: BranchKind) -> usize {
        self.branches.iter().filter(|b| b.kind == kind).count()
    }

    pub fn branch(&self, id: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn branch_mut(&mut self, id: &str) -> Option<&mut Branch> {
        self.branches.iter_mut().find(|b| b.id == id)
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let code = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: &code[s..i],
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &code[s..],
            column: s + 1,
        });
    }
    tokens
}

/// Parses a number with an optional SI suffix (`p n u m k M`).
pub fn parse_value(text: &str) -> Option<f64> {
    let (number, exp) = match text.chars().last()? {
        'p' => (&text[..text.len() - 1], -12),
        'n' => (&text[..text.len() - 1], -9),
        'u' => (&text[..text.len() - 1], -6),
        'm' => (&text[..text.len() - 1], -3),
        'k' => (&text[..text.len() - 1], 3),
        'M' => (&text[..text.len() - 1], 6),
        _ => (text, 0),
    };
    if number.is_empty() || number.ends_with(['e', 'E']) {
        return None;
    }
    let v: f64 = number.parse().ok()?;
    // Dividing by an exact power of ten keeps "230u" identical to 230e-6.
    let v = if exp < 0 { v / 10f64.powi(-exp) } else { v * 10f64.powi(exp) };
    v.is_finite().then_some(v)
}

struct Builder {
    node_names: Vec<String>,
    node_index: BTreeMap<String, NodeId>,
    first_seen: Vec<(usize, usize)>,
}

impl Builder {
    fn node(&mut self, tok: &Token<'_>, line: usize) -> NodeId {
        if let Some(id) = self.node_index.get(tok.text) {
            return *id;
        }
        let id = NodeId(self.node_names.len());
        self.node_names.push(tok.text.to_string());
        self.node_index.insert(tok.text.to_string(), id);
        self.first_seen.push((line, tok.column));
        id
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn semantic(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Semantic {
        line,
        column,
        message: message.into(),
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist> {
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument("empty netlist source".into()));
    }
    let mut builder = Builder {
        node_names: Vec::new(),
        node_index: BTreeMap::new(),
        first_seen: Vec::new(),
    };
    let mut branches: Vec<Branch> = Vec::new();
    let mut ground: Option<(String, usize, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(raw);
        let Some(head) = tokens.first() else {
            continue;
        };

        if let Some(directive) = head.text.strip_prefix('.') {
            match directive.to_ascii_lowercase().as_str() {
                "gnd" => {
                    if tokens.len() != 2 {
                        return Err(syntax(line, head.column, ".gnd takes exactly one node"));
                    }
                    if ground.is_some() {
                        return Err(semantic(line, head.column, "duplicate ground directive"));
                    }
                    ground = Some((tokens[1].text.to_string(), line, tokens[1].column));
                }
                "end" => break,
                _ => {
                    return Err(syntax(
                        line,
                        head.column,
                        format!("unknown directive '{}'", head.text),
                    ))
                }
            }
            continue;
        }

        let first = head.text.chars().next().unwrap_or(' ');
        let kind = BranchKind::from_prefix(first).ok_or_else(|| {
            syntax(
                line,
                head.column,
                format!("unknown element kind '{}'", head.text),
            )
        })?;
        if branches.iter().any(|b| b.id == head.text) {
            return Err(semantic(
                line,
                head.column,
                format!("duplicate element id '{}'", head.text),
            ));
        }

        let node_count = if kind == BranchKind::IdealTransformer { 4 } else { 2 };
        if tokens.len() < 1 + node_count {
            return Err(syntax(
                line,
                head.column,
                format!("'{}' needs {node_count} nodes", head.text),
            ));
        }
        let nodes: Vec<NodeId> = tokens[1..=node_count]
            .iter()
            .map(|t| builder.node(t, line))
            .collect();
        let rest = &tokens[1 + node_count..];

        let branch = if kind == BranchKind::Switch {
            let mut params = SwitchParams::default();
            for tok in rest {
                let (key, val) = tok
                    .text
                    .split_once('=')
                    .ok_or_else(|| syntax(line, tok.column, "expected gon=<S> or goff=<S>"))?;
                let v = parse_value(val)
                    .ok_or_else(|| syntax(line, tok.column, format!("bad value '{val}'")))?;
                match key.to_ascii_lowercase().as_str() {
                    "gon" => params.on_conductance = v,
                    "goff" => params.off_conductance = v,
                    _ => {
                        return Err(syntax(
                            line,
                            tok.column,
                            format!("unknown switch parameter '{key}'"),
                        ))
                    }
                }
            }
            if params.off_conductance < 0.0 || params.on_conductance <= params.off_conductance {
                return Err(semantic(
                    line,
                    head.column,
                    "switch conductances must satisfy gon > goff >= 0",
                ));
            }
            Branch {
                id: head.text.to_string(),
                kind,
                nodes,
                value: params.on_conductance,
                switch: Some(params),
                line,
            }
        } else {
            let tok = match rest {
                [tok] => tok,
                [] => return Err(syntax(line, head.column, "missing component value")),
                [_, extra, ..] => return Err(syntax(line, extra.column, "unexpected token")),
            };
            let value = parse_value(tok.text)
                .ok_or_else(|| syntax(line, tok.column, format!("bad value '{}'", tok.text)))?;
            if value <= 0.0 {
                return Err(semantic(line, tok.column, "non-positive component value"));
            }
            Branch {
                id: head.text.to_string(),
                kind,
                nodes,
                value,
                switch: None,
                line,
            }
        };
        branches.push(branch);
    }

    let (gname, gline, gcol) = ground.ok_or(Error::MissingGround)?;
    let ground = *builder
        .node_index
        .get(&gname)
        .ok_or_else(|| semantic(gline, gcol, format!("ground node '{gname}' is not connected")))?;

    let mut degree = vec![0usize; builder.node_names.len()];
    for b in &branches {
        let mut seen: Vec<NodeId> = b.nodes.clone();
        seen.sort();
        seen.dedup();
        for n in seen {
            degree[n.0] += 1;
        }
    }
    if let Some(n) = degree.iter().position(|d| *d < 2) {
        let (line, column) = builder.first_seen[n];
        return Err(semantic(
            line,
            column,
            format!("dangling node '{}'", builder.node_names[n]),
        ));
    }

    Ok(Netlist {
        branches,
        node_names: builder.node_names,
        ground,
    })
}

/// Writes a netlist back in the text format accepted by [`parse_netlist`].
pub fn to_text(net: &Netlist) -> String {
    let mut out = format!(".gnd {}\n", net.node_name(net.ground));
    for b in &net.branches {
        out.push_str(&b.id);
        for n in &b.nodes {
            out.push(' ');
            out.push_str(net.node_name(*n));
        }
        match b.switch {
            Some(p) => out.push_str(&format!(
                " gon={:?} goff={:?}",
                p.on_conductance, p.off_conductance
            )),
            None => out.push_str(&format!(" {:?}", b.value)),
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_source() {
        let net = parse_netlist("V1 in gnd 48\nL1 in out 1.13u\nR1 out gnd 1\n.gnd gnd").unwrap();
        assert_eq!(net.branches.len(), 3);
        assert_eq!(net.node_count(), 3);
        assert!((net.branches[1].value - 1.13e-6).abs() < 1e-20);
        assert_eq!(net.node_name(net.ground), "gnd");
    }

    #[test]
    fn suffixes() {
        assert_eq!(parse_value("10m"), Some(10e-3));
        assert_eq!(parse_value("2M"), Some(2e6));
        assert_eq!(parse_value("230u"), Some(230e-6));
        assert_eq!(parse_value("1e-3"), Some(1e-3));
        assert_eq!(parse_value("4p"), Some(4e-12));
        assert_eq!(parse_value("1x"), None);
        assert_eq!(parse_value("u"), None);
        assert_eq!(parse_value("1e"), None);
    }

    #[test]
    fn negative_value_is_semantic_error() {
        let err = parse_netlist(".gnd 0\nV1 a 0 1\nL1 a b -1u\nR1 b 0 1").unwrap_err();
        match err {
            Error::Semantic { line, column, message } => {
                assert_eq!((line, column), (3, 8));
                assert_eq!(message, "non-positive component value");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_ground() {
        let err = parse_netlist("V1 a 0 1\nR1 a 0 1").unwrap_err();
        assert!(matches!(err, Error::MissingGround));
        assert_eq!(err.to_string(), "missing ground directive");
    }

    #[test]
    fn dangling_node_reports_location() {
        let err = parse_netlist(".gnd 0\nV1 a 0 1\nR1 a b 1\nR2 a 0 1").unwrap_err();
        match err {
            Error::Semantic { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("dangling node 'b'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_syntax_error() {
        let err = parse_netlist(".gnd 0\nQ1 a 0 1").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, column: 1, .. }));
    }

    #[test]
    fn switch_and_transformer_lines() {
        let src = "# bridge\n.gnd 0\nV1 p 0 10\nS1 p a gon=2k goff=1u\nS2 a 0\nT1 a 0 s 0 2 # xfmr\nR1 s 0 5\n";
        let net = parse_netlist(src).unwrap();
        assert_eq!(net.switch_count(), 2);
        let s1 = net.branch("S1").unwrap().switch.unwrap();
        assert_eq!(s1.on_conductance, 2e3);
        assert_eq!(s1.off_conductance, 1e-6);
        assert_eq!(net.branch("S2").unwrap().switch.unwrap(), SwitchParams::default());
        assert_eq!(net.branch("T1").unwrap().nodes.len(), 4);
    }

    #[test]
    fn switch_conductance_ordering() {
        let err = parse_netlist(".gnd 0\nV1 a 0 1\nS1 a 0 gon=1 goff=2").unwrap_err();
        assert!(matches!(err, Error::Semantic { .. }));
    }

    #[test]
    fn text_round_trip() {
        let src = ".gnd 0\nV1 p 0 10\nS1 p a gon=2k goff=1u\nS2 a 0\nL1 a 0 1u\n";
        let net = parse_netlist(src).unwrap();
        assert_eq!(parse_netlist(&to_text(&net)).unwrap(), net);
    }
}
