use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gapmap_core::community::graph_communities;
use gapmap_core::embeddings::{fit_projection, Matrix};
use gapmap_core::graph::{build_knn_graph, gap_scores};

fn points(n: usize, p: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    Matrix::new(n, p, (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_graph");
    group.sample_size(10);
    for n in [500, 2000] {
        let z = points(n, 64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &z, |b, z| {
            b.iter(|| build_knn_graph(z, 15, 256).unwrap())
        });
    }
    group.finish();
}

fn density(c: &mut Criterion) {
    let z = points(2000, 64);
    c.bench_function("gap_scores/2000x3", |b| b.iter(|| gap_scores(&z, &[5, 15, 30]).unwrap()));
}

fn communities(c: &mut Criterion) {
    let graph = build_knn_graph(&points(2000, 64), 15, 256).unwrap();
    let mut group = c.benchmark_group("communities");
    group.sample_size(10);
    group.bench_function("louvain/2000", |b| b.iter(|| graph_communities(&graph, 1.0, 42).unwrap()));
    group.finish();
}

fn projection(c: &mut Criterion) {
    let x = points(2000, 256);
    let mut group = c.benchmark_group("projection");
    group.sample_size(10);
    group.bench_function("pca/2000x256->64", |b| b.iter(|| fit_projection(&x, 64).unwrap()));
    group.finish();
}

criterion_group!(benches, knn, density, communities, projection);
criterion_main!(benches);
