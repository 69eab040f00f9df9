//! Synthetic multi-skill data for the specialization experiments.
//!
//! Each example belongs to skill cluster `c` and carries a latent cue `j`,
//! both in `0..K`. Its model input concatenates three K-dim blocks:
//!
//! * question topic: `e_c + N(0, noise²)`, also the routing feature;
//! * visual hint: `hint_strength · e_answer + N(0, hint_noise²)`, a weak
//!   answer signal shared by all skills;
//! * CoT: with skill CoT, `e_j + N(0, noise²)`; without, a uniformly random
//!   one-hot plus the same noise (narration unrelated to the answer).
//!
//! The answer is `(j + c) mod K` under [`Mapping::Interference`] (a Latin
//! square, so every pair of skills maps the same cue to different answers)
//! and `j` under [`Mapping::Shared`]. CoT targets are `[c, j]` with skill CoT
//! and two uniform random tokens without.
//!
//! Under interference no single linear head fits all K² (c, j) cells: summed
//! over the grid, the correct logit and any shifted logit `(j + c + s) mod K`
//! have the same total, so the correct one cannot win every cell.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::toy::{ToyDataset, ToyModelConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    Interference,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_skills: usize,
    pub train_per_skill: usize,
    pub test_per_skill: usize,
    pub noise: f64,
    pub hint_strength: f64,
    pub hint_noise: f64,
    pub mapping: Mapping,
    pub skill_cot: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_skills: 5,
            train_per_skill: 60,
            test_per_skill: 100,
            noise: 0.1,
            hint_strength: 1.0,
            hint_noise: 1.0,
            mapping: Mapping::Interference,
            skill_cot: true,
        }
    }
}

impl SyntheticConfig {
    pub fn input_dim(&self) -> usize {
        3 * self.n_skills
    }

    /// Toy-model shape for this data; training knobs come from `base`.
    pub fn model_config(&self, base: &ToyModelConfig) -> ToyModelConfig {
        ToyModelConfig {
            input_dim: self.input_dim(),
            answer_classes: self.n_skills,
            cot_vocab: self.n_skills,
            cot_len: 2,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: ToyDataset,
    pub test: ToyDataset,
    pub train_route: Vec<Vec<f64>>,
    pub test_route: Vec<Vec<f64>>,
    pub train_skill: Vec<usize>,
    pub test_skill: Vec<usize>,
}

/// Every example draws the same random numbers whatever `mapping` and
/// `skill_cot` are, so the four ablation cells share questions and answers.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> SyntheticData {
    let k = cfg.n_skills;
    let mut rng = seeded(derive_seed(seed, 0x5157));
    let noise = Normal::new(0.0, cfg.noise).expect("noise must be finite and >= 0");
    let hint_noise = Normal::new(0.0, cfg.hint_noise).expect("hint_noise must be finite and >= 0");
    let mut draw = |count: usize| {
        let mut data = ToyDataset::default();
        let mut route = Vec::new();
        let mut skill = Vec::new();
        for i in 0..count * k {
            let c = i % k;
            let j = rng.random_range(0..k);
            let answer = match cfg.mapping {
                Mapping::Interference => (j + c) % k,
                Mapping::Shared => j,
            };
            let topic: Vec<f64> = (0..k)
                .map(|d| (d == c) as u8 as f64 + noise.sample(&mut rng))
                .collect();
            let hint: Vec<f64> = (0..k)
                .map(|d| {
                    cfg.hint_strength * (d == answer) as u8 as f64 + hint_noise.sample(&mut rng)
                })
                .collect();
            let cue: Vec<f64> = (0..k)
                .map(|d| (d == j) as u8 as f64 + noise.sample(&mut rng))
                .collect();
            let distractor = rng.random_range(0..k);
            let narration: Vec<f64> = (0..k)
                .map(|d| (d == distractor) as u8 as f64 + noise.sample(&mut rng))
                .collect();
            let random_tokens = vec![rng.random_range(0..k), rng.random_range(0..k)];

            let mut x = topic.clone();
            x.extend(hint);
            if cfg.skill_cot {
                x.extend(cue);
                data.cot_targets.push(vec![c, j]);
            } else {
                x.extend(narration);
                data.cot_targets.push(random_tokens);
            }
            data.features.push(x);
            data.answers.push(answer);
            route.push(topic);
            skill.push(c);
        }
        (data, route, skill)
    };
    let (train, train_route, train_skill) = draw(cfg.train_per_skill);
    let (test, test_route, test_skill) = draw(cfg.test_per_skill);
    SyntheticData {
        train,
        test,
        train_route,
        test_route,
        train_skill,
        test_skill,
    }
}
