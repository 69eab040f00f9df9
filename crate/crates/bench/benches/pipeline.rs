use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use skillcot_bench::{points, questions, toy_data};
use skillcot_core::clustering::{fit_kmeans, KMeansOptions};
use skillcot_core::embedding::{hash_embed, EncoderSpec, HashEncoder};
use skillcot_core::experts::{route, train_toy, ExpertPartition, ToyModelConfig};

fn kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    for n in [200, 2000] {
        let data = points(n, 16, 1);
        group.bench_with_input(BenchmarkId::new("k10_d16", n), &data, |b, data| {
            b.iter(|| fit_kmeans(black_box(data), 10, 0, &KMeansOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn embedding(c: &mut Criterion) {
    let qs = questions(256);
    c.bench_function("hash_embed_256_questions", |b| {
        b.iter(|| {
            qs.iter().for_each(|q| {
                black_box(hash_embed(black_box(q), 16));
            })
        })
    });
}

fn routing(c: &mut Criterion) {
    let encoder = HashEncoder::new(16).unwrap();
    let model = fit_kmeans(&points(500, 16, 2), 5, 0, &KMeansOptions::default()).unwrap();
    let partition = ExpertPartition {
        n_experts: 5,
        centroid_model: model,
        assignments: BTreeMap::new(),
        encoder: EncoderSpec::test_hash(16),
    };
    let qs = questions(256);
    c.bench_function("route_256_questions", |b| {
        b.iter(|| {
            qs.iter()
                .map(|q| route(black_box(q), &partition, &encoder).unwrap())
                .sum::<usize>()
        })
    });
}

fn training(c: &mut Criterion) {
    let cfg = ToyModelConfig {
        epochs: 10,
        learning_rate: 0.1,
        ..ToyModelConfig::default()
    };
    let data = toy_data(&cfg, 500, 3);
    let assignments: Vec<usize> = (0..data.len()).map(|i| i % 5).collect();
    c.bench_function("train_toy_5x100_10_epochs", |b| {
        b.iter(|| train_toy(black_box(&data), &assignments, 5, &cfg).unwrap())
    });
}

criterion_group!(benches, kmeans, embedding, routing, training);
criterion_main!(benches);
