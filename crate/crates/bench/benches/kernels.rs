use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plr_bench::split;
use plr_core::clustering::{dbscan, kmeans, DbscanParams};
use plr_core::metrics::evaluate;
use plr_core::rerank::{k_reciprocal_rerank, RerankParams};
use plr_core::{camera_normalize, pairwise_distances, self_distances, Metric};

fn distances(c: &mut Criterion) {
    let mut group = c.benchmark_group("self_distances");
    group.sample_size(10);
    for dim in [64, 512, 2048] {
        let data = split(200, dim);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &data.train, |b, fs| {
            b.iter(|| self_distances(black_box(fs), Metric::Euclidean).unwrap())
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let data = split(200, 64);
    let train = camera_normalize(&data.train);
    let mut group = c.benchmark_group("clustering");
    group.sample_size(10);
    group.bench_function("dbscan", |b| {
        b.iter(|| dbscan(black_box(&train), &DbscanParams::default()).unwrap())
    });
    group.bench_function("kmeans", |b| b.iter(|| kmeans(black_box(&train), 160, 1).unwrap()));
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = split(200, 64);
    let (q, g) = (&data.query, &data.gallery);
    let dist = pairwise_distances(q, g, Metric::Euclidean).unwrap();
    let (qp, gp) = (q.persons().unwrap(), g.persons().unwrap());
    c.bench_function("evaluate", |b| {
        b.iter(|| evaluate(black_box(&dist), qp, q.cameras(), gp, g.cameras(), 10).unwrap())
    });
    let mut group = c.benchmark_group("rerank");
    group.sample_size(10);
    group.bench_function("k_reciprocal", |b| {
        b.iter(|| k_reciprocal_rerank(black_box(q), g, &RerankParams::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, distances, clustering, evaluation);
criterion_main!(benches);
