//! Seeded inputs shared by the benchmarks.

use rand::RngExt;
use skillcot_core::experts::{ToyDataset, ToyModelConfig};
use skillcot_core::rng::seeded;

pub fn points(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn questions(n: usize) -> Vec<String> {
    let stems = [
        "How far is the",
        "Which object is closest to the",
        "How many",
        "What happens after the",
    ];
    let nouns = [
        "kettle", "door", "lamp", "bicycle", "window", "chair", "camera", "table",
    ];
    (0..n)
        .map(|i| {
            format!(
                "{} {} number {i}?",
                stems[i % stems.len()],
                nouns[(i / 4) % nouns.len()]
            )
        })
        .collect()
}

pub fn toy_data(cfg: &ToyModelConfig, n: usize, seed: u64) -> ToyDataset {
    let mut rng = seeded(seed);
    ToyDataset {
        features: points(n, cfg.input_dim, seed ^ 0xbe),
        answers: (0..n)
            .map(|_| rng.random_range(0..cfg.answer_classes))
            .collect(),
        cot_targets: (0..n)
            .map(|_| {
                (0..cfg.cot_len)
                    .map(|_| rng.random_range(0..cfg.cot_vocab))
                    .collect()
            })
            .collect(),
    }
}
