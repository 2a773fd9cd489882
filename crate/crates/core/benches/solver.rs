//! Sequential versus rayon-parallel execution of the hot paths: path
//! simulation, one backward solve, and a small batch of repetitions.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use bsde_core::bases::{build_hc, HypercubeSpec, OutsidePolicy};
use bsde_core::experiment::{preset, run_experiment};
use bsde_core::forward::{simulate, Scheme};
use bsde_core::solver::{backward_solve, SolverConfig};
use bsde_core::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn simulation(c: &mut Criterion) {
    let spec = preset("table1", 2).unwrap();
    let model = spec.model().unwrap();
    let mut group = c.benchmark_group("simulate_n10_m32768");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate(&model, Scheme::Euler, 0.5, 10, 32768, black_box(7), exec).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let spec = preset("table1", 2).unwrap();
    let model = spec.model().unwrap();
    let driver = spec.driver().unwrap();
    let (n, m) = (10, 32768);
    let ensemble = simulate(&model, Scheme::Euler, 0.5, n, m, 7, Execution::Parallel).unwrap();
    let basis = build_hc(
        &HypercubeSpec::from_interval(60.0, 140.0, 1.0, 1).with_outside(OutsidePolicy::NearestCell),
        1,
    )
    .unwrap();
    let mut group = c.benchmark_group("backward_solve_table1_n10_m32768");
    group.sample_size(20);
    for (name, exec) in MODES {
        let mut cfg = SolverConfig::new(n, m);
        cfg.execution = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                backward_solve(&cfg, &ensemble, &basis, &driver, &spec.payoff)
                    .unwrap()
                    .y0
            })
        });
    }
    group.finish();
}

fn repetitions(c: &mut Criterion) {
    let mut spec = preset("table2", 1).unwrap();
    spec.m_grid = vec![8192];
    spec.repetitions = 8;
    let mut group = c.benchmark_group("table2_8_reps_m8192");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_experiment(&spec, exec).unwrap().rows[0].mean)
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, backward, repetitions);
criterion_main!(benches);
