use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use cil_bench::{constant_state, matrices, smooth_vector};
use cil_core::oscillator::{oscillatory_step, OscillatorParams};
use cil_core::tensor::lambda_max;
use cil_core::torus::helmholtz_decompose;

fn bench_lambda_max(c: &mut Criterion) {
    let mut group = c.benchmark_group("lambda_max");
    for dim in [2, 3] {
        let ms = matrices(dim, 4096);
        group.throughput(Throughput::Elements(ms.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(dim), &ms, |b, ms| {
            b.iter(|| ms.iter().map(|m| lambda_max(black_box(m))).sum::<f64>())
        });
    }
    group.finish();
}

fn bench_helmholtz(c: &mut Criterion) {
    let mut group = c.benchmark_group("helmholtz");
    for (dim, n) in [(2, 64), (2, 256), (3, 32)] {
        let m = smooth_vector(dim, n);
        group.bench_with_input(BenchmarkId::new(format!("{dim}d"), n), &m, |b, m| {
            b.iter(|| helmholtz_decompose(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_oscillatory_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("oscillatory_step");
    group.sample_size(10);
    let state = constant_state(32, 8);
    let params = OscillatorParams::default();
    for n in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| oscillatory_step(black_box(&state), n, &params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_lambda_max,
    bench_helmholtz,
    bench_oscillatory_step
);
criterion_main!(kernels);
