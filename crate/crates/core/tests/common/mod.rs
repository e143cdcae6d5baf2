#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinmpc_core::netlist::{compile, parse_netlist, state_conductances, synthesize_base_with};
use twinmpc_core::surrogate::{FeedForwardNet, Workspace};
use twinmpc_core::SwitchState;

/// Random switched RLC netlist with at most `max_switches` switches and
/// `max_states` energy-storage elements. Every node has a resistive path to
/// ground and a neighbour, every inductor sits in series with a resistor, so no switching
/// state can produce a capacitor loop or inductor cutset.
pub fn random_netlist<R: Rng>(rng: &mut R, max_switches: usize, max_states: usize) -> String {
    let nodes = rng.gen_range(2..=4);
    let mut out = String::from(".gnd 0\n");
    out += &format!("V1 src 0 {:?}\n", rng.gen_range(1.0..100.0));
    out += &format!("Rs src n1 {:?}\n", rng.gen_range(0.01..1.0));
    for n in 1..=nodes {
        out += &format!("Rg{n} n{n} 0 {:?}\n", rng.gen_range(10.0..1e4));
        if n > 1 {
            out += &format!("Rc{n} n{} n{n} {:?}\n", n - 1, rng.gen_range(0.1..100.0));
        }
    }
    let node = |rng: &mut R| {
        let k = rng.gen_range(0..=nodes);
        if k == 0 { "0".to_string() } else { format!("n{k}") }
    };
    let states = rng.gen_range(1..=max_states);
    let caps = rng.gen_range(0..=states.min(nodes));
    let mut cap_nodes: Vec<usize> = (1..=nodes).collect();
    for i in 0..caps {
        let k = cap_nodes.swap_remove(rng.gen_range(0..cap_nodes.len()));
        out += &format!("C{i} n{k} 0 {:?}\n", rng.gen_range(1e-7..1e-4));
    }
    for i in 0..states - caps {
        let a = format!("n{}", rng.gen_range(1..=nodes));
        let mut b = node(rng);
        while b == a {
            b = node(rng);
        }
        out += &format!("L{i} {a} l{i} {:?}\n", rng.gen_range(1e-6..1e-3));
        out += &format!("Rl{i} l{i} {b} {:?}\n", rng.gen_range(0.01..10.0));
        out += &format!("Rlg{i} l{i} 0 {:?}\n", rng.gen_range(1e3..1e5));
    }
    for i in 0..rng.gen_range(1..=max_switches) {
        let a = node(rng);
        let mut b = node(rng);
        while b == a {
            b = node(rng);
        }
        out += &format!(
            "S{i} {a} {b} gon={:?} goff={:?}\n",
            rng.gen_range(1.0..100.0),
            rng.gen_range(1e-6..1e-3)
        );
    }
    out
}

/// Largest relative Frobenius error between the table-assembled `A` and a
/// fresh synthesis with the switches replaced by their resistances.
pub fn lut_vs_resynthesis(text: &str) -> f64 {
    let net = parse_netlist(text).expect("generated netlist parses");
    let k = net.switch_count();
    let states: Vec<SwitchState> = (0..1u64 << k).map(|m| SwitchState::from_mask(m, k)).collect();
    let model = compile(&net, &states).expect("generated netlist compiles");
    states
        .iter()
        .map(|s| {
            let direct = synthesize_base_with(&net, &state_conductances(&net, s)).expect("resynthesis");
            let a = model.assemble_a(s).unwrap();
            (&a - &direct.a0).norm() / direct.a0.norm().max(1e-300)
        })
        .fold(0.0, f64::max)
}

/// Largest relative deviation between backprop and central differences.
pub fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=3);
    let mut widths = vec![rng.gen_range(1..=5)];
    for _ in 0..depth {
        widths.push(rng.gen_range(2..=6));
    }
    widths.push(rng.gen_range(1..=3));
    let mut net = FeedForwardNet::random(&widths, &mut rng).unwrap();
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    // Central differences are meaningless across a ReLU kink, so inputs whose
    // hidden pre-activations sit within reach of zero are redrawn.
    let mut batch: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    while batch.len() < 8 {
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let margin = net.hidden_pre_activations(&x).iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()));
        if margin < 1e-2 {
            continue;
        }
        let t = (0..*widths.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        batch.push((x, t));
    }
    let loss = |n: &FeedForwardNet| n.mse(batch.iter().map(|(x, t)| (x.as_slice(), t.as_slice())));
    let mut grad = Vec::new();
    let mut ws = Workspace::default();
    net.mse_and_grad(batch.iter().map(|(x, t)| (x.as_slice(), t.as_slice())), &mut grad, &mut ws);

    let eps = 1e-4;
    let mut fd = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + eps;
        let up = loss(&net);
        net.params_mut()[i] = orig - eps;
        let down = loss(&net);
        net.params_mut()[i] = orig;
        fd[i] = (up - down) / (2.0 * eps);
    }
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    diff / norm
}
