use twinmpc_core::optimizer::{optimize_grid, optimize_sso, GridConfig, OptimizeBudget, Phase, SsoConfig, Termination};
use twinmpc_core::Result;

fn sphere(u: &[f64]) -> f64 {
    let c = [0.6, 0.4, 0.5];
    u.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum()
}

fn rosenbrock(u: &[f64]) -> f64 {
    u.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
}

fn ill_quadratic(u: &[f64]) -> f64 {
    let x = u[0] - 0.3;
    let y = u[1] - 0.7;
    let z = u[2] - 0.45;
    100.0 * (x + y).powi(2) + 0.1 * (x - y).powi(2) + 10.0 * z * z
}

fn fd_gradient(f: fn(&[f64]) -> f64, u: &[f64]) -> Vec<f64> {
    let e = 1e-6;
    (0..u.len())
        .map(|i| {
            let mut p = u.to_vec();
            let mut m = u.to_vec();
            p[i] += e;
            m[i] -= e;
            (f(&p) - f(&m)) / (2.0 * e)
        })
        .collect()
}

fn run(f: fn(&[f64]) -> f64) -> (Vec<f64>, f64, Termination, Vec<(f64, f64, f64)>) {
    let mut cost = |u: &[f64]| -> Result<f64> { Ok(f(u)) };
    let cfg = SsoConfig::default();
    let r = optimize_sso(&mut cost, &[0.25, 0.25, 0.25], &cfg, &OptimizeBudget::evals(200_000)).unwrap();
    let accepted = r
        .trace
        .rows
        .iter()
        .filter(|row| row.accepted && !matches!(row.phase, Phase::Init | Phase::Shrink))
        .map(|row| (row.j, row.j0, row.h))
        .collect();
    (r.best, r.best_cost, r.termination, accepted)
}

#[test]
fn terminal_gradient_vanishes_on_smooth_costs() {
    let sigma = SsoConfig::default().sigma;
    for (name, f) in [
        ("sphere", sphere as fn(&[f64]) -> f64),
        ("rosenbrock", rosenbrock),
        ("ill-conditioned quadratic", ill_quadratic),
    ] {
        let (best, cost, term, accepted) = run(f);
        assert_eq!(term, Termination::ScaleUnderflow, "{name}");
        let g = fd_gradient(f, &best);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{name}: |grad| = {norm:e} at {best:?} (J = {cost:e})");
        for (j, j0, h) in accepted {
            assert!(j <= j0 - sigma * h * h, "{name}: accepted {j} vs {j0} at h = {h}");
        }
    }
}

#[test]
fn per_iteration_evaluations_scale_as_stated() {
    for n in 1..=3usize {
        let mut cost = |u: &[f64]| -> Result<f64> { Ok(u.iter().map(|v| (v - 0.55).powi(2)).sum()) };
        let start = vec![0.25; n];
        let sso = optimize_sso(&mut cost, &start, &SsoConfig::default(), &OptimizeBudget::evals(5000)).unwrap();
        assert!(sso.trace.evals_per_iteration().iter().all(|c| *c <= n + 2));
        let grid = optimize_grid(&mut cost, &start, &GridConfig::default(), &OptimizeBudget::iterations(20)).unwrap();
        assert!(grid.trace.evals_per_iteration().iter().all(|c| *c == 3usize.pow(n as u32) - 1));
    }
}
