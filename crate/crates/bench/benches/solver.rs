use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use overparam::solver::MinNormSolver;
use overparam_bench::gaussian_problem;

fn min_norm(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_norm_fit");
    let gram = MinNormSolver::default();
    let svd = MinNormSolver::svd_only(1e-12);
    for &(p, n) in &[(100, 50), (600, 500), (2500, 500), (500, 600)] {
        let (x, y) = gaussian_problem(p, n, 7);
        let id = format!("{p}x{n}");
        group.bench_with_input(BenchmarkId::new("gram", &id), &(&x, &y), |b, (x, y)| {
            b.iter(|| black_box(gram.fit(x, y)))
        });
        if p * n <= 300_000 {
            group.bench_with_input(BenchmarkId::new("svd", &id), &(&x, &y), |b, (x, y)| {
                b.iter(|| black_box(svd.fit(x, y)))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, min_norm);
criterion_main!(benches);
