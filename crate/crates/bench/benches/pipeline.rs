use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tomolab_core::gateset::reference_gates;
use tomolab_core::nonunital::geometric_sum;
use tomolab_core::pipeline::{benchmark_set, reconstruct, simulate_gate_set, PipelineOptions};
use tomolab_core::spectral::{estimate_trace, TrackOptions};

fn trace_protocol(c: &mut Criterion) {
    let set = simulate_gate_set(5, 1e-4, 1e-3).unwrap();
    let ideal = reference_gates()[1].ideal_ptm;
    let p = set.error_rates()[1];
    c.bench_function("estimate_trace", |b| {
        b.iter(|| {
            let mut ctx = set.context(0.01, 3).unwrap();
            black_box(estimate_trace(&mut ctx, &[2], &ideal, p, &TrackOptions::default()).unwrap())
        })
    });
}

fn geometric(c: &mut Criterion) {
    let set = simulate_gate_set(5, 1e-4, 1e-3).unwrap();
    let m = set.gates[1].noisy_ptm.unital();
    c.bench_function("geometric_sum_n10000", |b| b.iter(|| black_box(geometric_sum(&m, black_box(10_000)))));
}

fn full_pipeline(c: &mut Criterion) {
    let set = simulate_gate_set(5, 1e-4, 1e-3).unwrap();
    let opts = PipelineOptions::default();
    let hints = set.error_rates();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    g.bench_function("reconstruct", |b| {
        b.iter(|| {
            let mut ctx = set.context(0.01, 3).unwrap();
            black_box(reconstruct(&mut ctx, &set.gates, &hints, &opts).unwrap())
        })
    });
    g.bench_function("benchmark_set", |b| b.iter(|| black_box(benchmark_set(&set, 0.01, 3, &opts).unwrap())));
    g.finish();
}

criterion_group!(benches, trace_protocol, geometric, full_pipeline);
criterion_main!(benches);
