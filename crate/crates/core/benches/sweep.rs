use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use abrsim::experiment::{self, parse_config, GridPoint};

fn grid() -> Vec<GridPoint> {
    parse_config("n = [2, 5]\nlink_km = [20, 100, 500]\nhorizon_s = 0.05\n")
        .unwrap()
        .grid()
        .unwrap()
}

fn sweep(c: &mut Criterion) {
    let points = grid();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| experiment::run_points_sequential(&points))
    });
    #[cfg(feature = "parallel")]
    for jobs in [2, 4] {
        g.bench_with_input(BenchmarkId::new("parallel", jobs), &jobs, |b, &jobs| {
            b.iter(|| experiment::run_points_parallel(&points, jobs))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
