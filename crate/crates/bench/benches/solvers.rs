use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use twinmpc_bench::Fixture;
use twinmpc_core::solver::{integrate, SolverConfig, SolverKind};

fn one_cycle(c: &mut Criterion) {
    let f = Fixture::new(0.3).unwrap();
    let mut g = c.benchmark_group("one_tps_cycle");
    for (name, cfg) in [
        ("euler_50ns", SolverConfig::fixed(SolverKind::Euler, 50e-9)),
        ("rk2_75ns", SolverConfig::fixed(SolverKind::Rk2, 75e-9)),
        ("rk4_150ns", SolverConfig::fixed(SolverKind::Rk4, 150e-9)),
        ("event_driven", SolverConfig::event_driven()),
        ("adaptive_reference", SolverConfig::adaptive(1e-10, 1e-9)),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| integrate(&f.model, &f.timeline, black_box(&f.x0), &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(solvers, one_cycle);
criterion_main!(solvers);
