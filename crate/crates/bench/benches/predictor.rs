use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use twinmpc_bench::Fixture;

fn predict(c: &mut Criterion) {
    let f = Fixture::new(0.3).unwrap();
    c.bench_function("nsp_predict_cycle", |b| {
        b.iter(|| f.nsp.predict_cycle(&f.model, &f.timeline, black_box(&f.x0)).unwrap())
    });
    c.bench_function("predicted_cost", |b| b.iter(|| f.cost(black_box(&[0.3, 0.2, 0.1])).unwrap()));
}

criterion_group!(predictor, predict);
criterion_main!(predictor);
