use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use factor_alloc::{allocate, solve_semicoupling, AllocationOptions, Branch, ConcaveCost, SolverOptions};
use factor_alloc_bench::density_vs_points;

fn semicoupling(c: &mut Criterion) {
    let theta = ConcaveCost::power(0.5, 1.0, 32).expect("valid cost");
    let mut group = c.benchmark_group("semicoupling");
    group.sample_size(10);
    for n in [16, 32] {
        let (xi, eta) = density_vs_points(n, 50.0, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_semicoupling(&xi, &eta, &theta, &SolverOptions::default()).expect("solvable"))
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let theta = ConcaveCost::power(0.5, 1.0, 32).expect("valid cost");
    let opts = AllocationOptions {
        measure_balance: false,
        ..AllocationOptions::default()
    };
    let mut group = c.benchmark_group("allocate");
    group.sample_size(10);
    let (xi, eta) = density_vs_points(32, 50.0, 5);
    group.bench_function("mutually_singular_32", |b| {
        b.iter(|| allocate(&xi, &eta, &theta, Branch::MutuallySingular, &opts).expect("allocatable"))
    });
    group.finish();
}

criterion_group!(benches, semicoupling, pipeline);
criterion_main!(benches);
