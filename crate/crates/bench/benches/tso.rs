use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hopool_bench::{descriptor, doubling_etas, episode};
use hopool_core::pipeline::forward_episode;
use hopool_core::tso::{tso_fast_even, tso_naive};
use hopool_core::PipelineConfig;

fn shrinkage(c: &mut Criterion) {
    for (order, dim, max_log2) in [(2, 64, 10), (4, 8, 8)] {
        let t = descriptor(order, dim).unwrap();
        let mut group = c.benchmark_group(format!("tso_r{order}_d{dim}"));
        group.sample_size(20);
        for eta in doubling_etas(max_log2) {
            group.bench_with_input(BenchmarkId::new("naive", eta), &eta, |b, &eta| {
                b.iter(|| tso_naive(black_box(&t), eta).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("fast", eta), &eta, |b, &eta| {
                b.iter(|| tso_fast_even(black_box(&t), eta).unwrap())
            });
        }
        group.finish();
    }
}

fn episode_forward(c: &mut Criterion) {
    let (e, w) = episode(5, 3, 16, 9).unwrap();
    let cfg = PipelineConfig { heads: 2, threads: Some(1), ..PipelineConfig::default() };
    c.bench_function("forward_episode_z5_b3_d16", |b| b.iter(|| forward_episode(black_box(&e), &cfg, &w).unwrap()));
}

criterion_group!(benches, shrinkage, episode_forward);
criterion_main!(benches);
