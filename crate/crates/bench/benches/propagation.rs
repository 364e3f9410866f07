use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use klsim_bench::chain;
use klsim_core::prelude::*;

fn enumeration(c: &mut Criterion) {
    let mut g = c.benchmark_group("enumerate_sector");
    for n_tot in [2, 9, 14] {
        g.bench_with_input(BenchmarkId::from_parameter(n_tot), &n_tot, |b, &n| {
            b.iter(|| enumerate_sector(5, black_box(n)).unwrap())
        });
    }
    g.finish();
}

fn rhs(c: &mut Criterion) {
    let mut g = c.benchmark_group("lindblad_rhs");
    for n_tot in [2, 9] {
        let (ops, rho) = chain(n_tot, 10.0);
        g.bench_function(BenchmarkId::from_parameter(n_tot), |b| {
            b.iter(|| lindblad_rhs(black_box(&rho), &ops).unwrap())
        });
    }
    g.finish();
}

fn propagation(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagate_n2_u10_tau50");
    g.sample_size(10);
    let (ops, rho0) = chain(2, 10.0);
    let t_max = simulation_time(50.0, &ops.params);
    for prop in Propagator::ALL {
        let cfg = EvolutionConfig::new(t_max).with_propagator(prop);
        g.bench_function(prop.name(), |b| b.iter(|| propagate(black_box(&rho0), &ops, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, enumeration, rhs, propagation);
criterion_main!(benches);
