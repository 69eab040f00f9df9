mod oracles;

use nalgebra::DMatrix;
use rand::RngExt;
use skillcot_core::experts::{
    adapter_gradients, combined_loss, loss_terms, train_toy, ToyDataset, ToyExpertModel,
    ToyModelConfig,
};
use skillcot_core::rng::seeded;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn random_data(cfg: &ToyModelConfig, n: usize, seed: u64) -> ToyDataset {
    let mut rng = seeded(seed);
    ToyDataset {
        features: (0..n)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect(),
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

#[test]
fn uniform_four_way_loss() {
    let u = [0.25; 4];
    let cot: Vec<&[f64]> = vec![&u, &u, &u];
    let want = 1.5 * 4f64.ln();
    assert!((combined_loss(&u, 2, &cot, &[0, 1, 3], 0.5).unwrap() - want).abs() < 1e-9);
    let t = loss_terms(&[0.1, 0.6, 0.3], 1, &[&[0.5, 0.5][..]], &[0], 0.0).unwrap();
    assert!((t.combined - t.answer).abs() < 1e-12);
    assert!((t.answer + 0.6f64.ln()).abs() < 1e-12);
}

/// Oracle loss for expert `e` with one factor entry replaced.
fn oracle_loss(
    model: &ToyExpertModel,
    e: usize,
    data: &ToyDataset,
    which: usize,
    idx: usize,
    delta: f64,
) -> f64 {
    let ad = &model.experts[e];
    let mut f = [
        ad.answer.a.clone(),
        ad.answer.b.clone(),
        ad.cot.a.clone(),
        ad.cot.b.clone(),
    ];
    f[which][idx] += delta;
    let answer_w = oracles::add(
        &rows(&model.base_answer),
        &oracles::matmul(&rows(&f[0]), &rows(&f[1])),
    );
    let cot_w = oracles::add(
        &rows(&model.base_cot),
        &oracles::matmul(&rows(&f[2]), &rows(&f[3])),
    );
    oracles::ToyLossOracle {
        answer_w,
        cot_w,
        cot_vocab: model.config.cot_vocab,
        lambda: model.config.lambda,
        features: &data.features,
        answers: &data.answers,
        cot_targets: &data.cot_targets,
    }
    .loss()
}

#[test]
fn analytic_gradients_match_oracle_finite_differences() {
    let cfg = ToyModelConfig {
        adapter_rank: 4,
        ..ToyModelConfig::default()
    };
    let h = 1e-5;
    for seed in 0..10u64 {
        let mut model = ToyExpertModel::new(
            ToyModelConfig {
                seed,
                ..cfg.clone()
            },
            1,
        )
        .unwrap();
        model.randomize_adapters(seed + 100, 0.3);
        let data = random_data(&cfg, 5, seed + 200);
        let (terms, g) = adapter_gradients(&model, 0, &data).unwrap();
        assert!((terms.combined - oracle_loss(&model, 0, &data, 0, 0, 0.0)).abs() < 1e-10);
        let mut worst: f64 = 0.0;
        for (which, grad) in [&g.answer_a, &g.answer_b, &g.cot_a, &g.cot_b]
            .into_iter()
            .enumerate()
        {
            for idx in 0..grad.len() {
                let up = oracle_loss(&model, 0, &data, which, idx, h);
                let down = oracle_loss(&model, 0, &data, which, idx, -h);
                let numeric = (up - down) / (2.0 * h);
                let rel = (grad[idx] - numeric).abs() / (grad[idx].abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst:e}");
    }
}

#[test]
fn base_frozen_and_experts_isolated() {
    let cfg = ToyModelConfig {
        epochs: 30,
        learning_rate: 0.1,
        ..ToyModelConfig::default()
    };
    let data = random_data(&cfg, 24, 5);
    let assignments: Vec<usize> = (0..24).map(|i| i % 3).collect();
    let fresh = ToyExpertModel::new(cfg.clone(), 4).unwrap();
    let (trained, report) = train_toy(&data, &assignments, 4, &cfg).unwrap();
    assert_eq!(trained.base_answer, fresh.base_answer);
    assert_eq!(trained.base_cot, fresh.base_cot);
    // expert 3 had no examples
    assert_eq!(trained.experts[3], fresh.experts[3]);
    assert_eq!(report.expert_accuracy[3], None);
    assert!((0..3).all(|e| trained.experts[e] != fresh.experts[e]));

    // changing expert 1's shard leaves 0 and 2 bit-identical
    let mut changed = data.clone();
    for i in (1..24).step_by(3) {
        changed.answers[i] = (changed.answers[i] + 1) % cfg.answer_classes;
    }
    let (other, _) = train_toy(&changed, &assignments, 4, &cfg).unwrap();
    assert_eq!(other.experts[0], trained.experts[0]);
    assert_eq!(other.experts[2], trained.experts[2]);
    assert_ne!(other.experts[1], trained.experts[1]);
}

#[test]
fn reported_losses_decompose_and_decrease() {
    let cfg = ToyModelConfig {
        epochs: 40,
        learning_rate: 0.05,
        ..ToyModelConfig::default()
    };
    let data = random_data(&cfg, 20, 8);
    let (_, report) = train_toy(&data, &[0; 20], 1, &cfg).unwrap();
    for l in &report.epochs {
        assert!((l.combined - (l.answer + cfg.lambda * l.cot)).abs() < 1e-12);
    }
    let first: Vec<f64> = report
        .losses_of(0)
        .iter()
        .take(10)
        .map(|l| l.combined)
        .collect();
    for w in first.windows(2) {
        assert!(w[1] < w[0], "{first:?}");
    }
    assert!(report.gradient_check_max_rel_err < 1e-4);
}

#[test]
fn separable_two_class_problem_is_learned() {
    let cfg = ToyModelConfig {
        input_dim: 2,
        answer_classes: 2,
        cot_vocab: 2,
        cot_len: 1,
        adapter_rank: 2,
        epochs: 200,
        learning_rate: 0.5,
        ..ToyModelConfig::default()
    };
    let mut data = ToyDataset::default();
    for i in 0..20 {
        let y = i % 2;
        let s = if y == 0 { 1.0 } else { -1.0 };
        data.features.push(vec![
            s * (1.0 + 0.05 * i as f64),
            0.3 * ((i * 7 % 5) as f64 - 2.0),
        ]);
        data.answers.push(y);
        data.cot_targets.push(vec![y]);
    }
    let (_, report) = train_toy(&data, &[0; 20], 1, &cfg).unwrap();
    assert_eq!(report.pooled_accuracy, 1.0);
}

#[test]
fn model_text_round_trip_is_exact_to_nine_digits() {
    let cfg = ToyModelConfig {
        epochs: 5,
        ..ToyModelConfig::default()
    };
    let data = random_data(&cfg, 6, 1);
    let (model, _) = train_toy(&data, &[0, 1, 0, 1, 0, 1], 2, &cfg).unwrap();
    let text = model.to_text();
    let back = ToyExpertModel::parse(&text, std::path::Path::new("model.txt")).unwrap();
    assert_eq!(back.to_text(), text);
}
