use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dabsde_core::fbm::{sample_cholesky, sample_circulant, Hurst, TimeGrid};

fn samplers(c: &mut Criterion) {
    let h = Hurst::new(0.7).unwrap();
    let n_paths = 1000;
    let mut group = c.benchmark_group("fbm");
    group.sample_size(10);
    for n_steps in [64, 256, 1024] {
        let grid = TimeGrid::uniform(1.0, n_steps).unwrap();
        group.throughput(Throughput::Elements((n_paths * n_steps) as u64));
        group.bench_with_input(BenchmarkId::new("cholesky", n_steps), &grid, |b, g| {
            b.iter(|| sample_cholesky(g, h, n_paths, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("circulant", n_steps), &grid, |b, g| {
            b.iter(|| sample_circulant(g, h, n_paths, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, samplers);
criterion_main!(benches);
