use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qisac_core::{e_step, fc_max, fisher_symbol, run_em, sample_block, ChannelParams, EmConfig};

fn nominal() -> ChannelParams {
    ChannelParams::new(10.0, 0.8, 3.0, 45f64.to_radians()).unwrap()
}

fn bench_analytics(c: &mut Criterion) {
    let p = nominal();
    let mut group = c.benchmark_group("analytics");
    for deg in [10.0f64, 60.0] {
        group.bench_with_input(BenchmarkId::new("fisher_symbol", deg), &deg, |b, &deg| {
            b.iter(|| fisher_symbol(black_box(&p), (45.0 - deg).to_radians()).unwrap())
        });
    }
    group.bench_function("fc_max", |b| {
        b.iter(|| fc_max(black_box(&p), 1000).unwrap())
    });
    group.finish();
}

fn bench_em(c: &mut Criterion) {
    let p = nominal();
    let psi = 80f64.to_radians();
    let mut group = c.benchmark_group("em");
    let small = sample_block(&p, psi, 1000, 1).unwrap();
    group.bench_function("run_em/1000", |b| {
        b.iter(|| run_em(black_box(&small.x), &p, psi, &EmConfig::default()).unwrap())
    });
    let large = sample_block(&p, psi, 50_000, 2).unwrap();
    group.bench_function("e_step/50000", |b| {
        b.iter(|| e_step(black_box(&large.x), &p, psi, p.theta))
    });
    group.finish();
}

criterion_group!(benches, bench_analytics, bench_em);
criterion_main!(benches);
