//! Each workload runs on a one-worker pool and on a pool with every core.
//! Built with `--no-default-features`, both variants take the sequential path.

use std::hint::black_box;
use std::thread::available_parallelism;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use locdep::distributions::NegBinPoisParams;
use locdep::experiments::table1_cell;
use locdep::localdep::enumerate_exact_distribution;
use locdep::metrics::{dtv_empirical, EmpiricalDistribution};
use locdep::models::{build_model, ModelSampler, ModelSpec};
use locdep::par::with_threads;
use locdep::stein::{verify_delta_bound, SteinOperator};
use locdep::{FamilyParams, NormalParams};

fn pools() -> [(&'static str, usize); 2] {
    let all = available_parallelism().map_or(1, |n| n.get());
    let label = if cfg!(feature = "parallel") { "parallel" } else { "sequential-build" };
    [("sequential", 1), (label, all)]
}

fn triangle_sampler(c: &mut Criterion) {
    let mut group = c.benchmark_group("triangle_sampler");
    group.sample_size(10);
    let sampler = ModelSampler::new(&ModelSpec::Triangles { n: 300, p: 300f64.powf(-0.7) }).unwrap();
    for (name, threads) in pools() {
        group.bench_with_input(BenchmarkId::new(name, threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || black_box(sampler.counts(2_000, 7))))
        });
    }
    group.finish();
}

fn exact_enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_enumeration");
    group.sample_size(10);
    let (inst, _) = build_model(&ModelSpec::Hypercube { d: 3 }).unwrap();
    for (name, threads) in pools() {
        group.bench_with_input(BenchmarkId::new(name, threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || black_box(enumerate_exact_distribution(&inst).unwrap())))
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap_dtv");
    group.sample_size(10);
    let spec = ModelSpec::Triangles { n: 100, p: 0.08 };
    let counts = ModelSampler::new(&spec).unwrap().counts(20_000, 1);
    let emp = EmpiricalDistribution::from_counts(counts, 1, spec.id()).unwrap();
    let target = NormalParams::new(emp.mean(), emp.variance()).unwrap();
    let yd = locdep::distributions::build_discretized_normal(&target, 1e-12).unwrap();
    for (name, threads) in pools() {
        group.bench_with_input(BenchmarkId::new(name, threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || black_box(dtv_empirical(&emp, &yd, 100))))
        });
    }
    group.finish();
}

fn stein_bound_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("stein_bound_trials");
    group.sample_size(10);
    let op = SteinOperator::new(FamilyParams::M2(NegBinPoisParams::new(4.0, 0.5, 0.5).unwrap())).unwrap();
    for (name, threads) in pools() {
        group.bench_with_input(BenchmarkId::new(name, threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || black_box(verify_delta_bound(&op, 20, 3).unwrap())))
        });
    }
    group.finish();
}

fn table_cell(c: &mut Criterion) {
    let mut group = c.benchmark_group("table1_cell");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_with_input(BenchmarkId::new(name, threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || black_box(table1_cell(300, 0.8, 2_000, 7, 20).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, triangle_sampler, exact_enumeration, bootstrap, stein_bound_trials, table_cell);
criterion_main!(benches);
