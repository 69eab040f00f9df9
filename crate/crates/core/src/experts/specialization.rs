//! Routed experts versus one shared adapter of equal rank budget, and the
//! four-cell skill-CoT × experts ablation, on synthetic data.

use serde::{Deserialize, Serialize};

use super::synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
use super::toy::{evaluate, train_toy, ToyModelConfig};
use crate::clustering::{fit_kmeans_detailed, KMeansOptions};
use crate::error::Result;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub n_experts: usize,
    /// Training knobs; shape fields are overwritten from `synthetic`.
    pub model: ToyModelConfig,
    pub routing_restarts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            n_experts: 5,
            model: ToyModelConfig {
                learning_rate: 0.5,
                epochs: 300,
                ..ToyModelConfig::default()
            },
            routing_restarts: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecializationRow {
    pub seed: u64,
    pub routed_accuracy: f64,
    pub shared_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecializationSummary {
    pub mean_routed: f64,
    pub mean_shared: f64,
}

impl SpecializationSummary {
    pub fn of(rows: &[SpecializationRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            mean_routed: rows.iter().map(|r| r.routed_accuracy).sum::<f64>() / n,
            mean_shared: rows.iter().map(|r| r.shared_accuracy).sum::<f64>() / n,
        }
    }

    /// Routed minus shared, in accuracy points.
    pub fn gap_points(&self) -> f64 {
        100.0 * (self.mean_routed - self.mean_shared)
    }
}

/// Test accuracy of `n_experts` adapters of rank r behind k-means routing.
fn routed_accuracy(cfg: &ExperimentConfig, data: &SyntheticData, seed: u64) -> Result<f64> {
    let opts = KMeansOptions {
        restarts: cfg.routing_restarts.max(1),
        ..KMeansOptions::default()
    };
    let fit = fit_kmeans_detailed(
        &data.train_route,
        cfg.n_experts,
        derive_seed(seed, 1),
        &opts,
    )?;
    let train_routes = data
        .train_route
        .iter()
        .map(|p| fit.model.assign(p).map(|a| a.cluster))
        .collect::<Result<Vec<_>>>()?;
    let test_routes = data
        .test_route
        .iter()
        .map(|p| fit.model.assign(p).map(|a| a.cluster))
        .collect::<Result<Vec<_>>>()?;
    let model_cfg = ToyModelConfig {
        seed,
        ..cfg.synthetic.model_config(&cfg.model)
    };
    let (model, _) = train_toy(&data.train, &train_routes, cfg.n_experts, &model_cfg)?;
    evaluate(&model, &data.test, &test_routes)
}

/// Test accuracy of one adapter of rank `n_experts · r` trained on everything.
fn shared_accuracy(cfg: &ExperimentConfig, data: &SyntheticData, seed: u64) -> Result<f64> {
    let mut model_cfg = ToyModelConfig {
        seed,
        ..cfg.synthetic.model_config(&cfg.model)
    };
    model_cfg.adapter_rank *= cfg.n_experts;
    let (model, _) = train_toy(&data.train, &vec![0; data.train.len()], 1, &model_cfg)?;
    evaluate(&model, &data.test, &vec![0; data.test.len()])
}

pub fn eval_specialization(
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<SpecializationRow>> {
    seeds
        .iter()
        .map(|&seed| {
            let data = generate_synthetic(&cfg.synthetic, seed);
            Ok(SpecializationRow {
                seed,
                routed_accuracy: routed_accuracy(cfg, &data, seed)?,
                shared_accuracy: shared_accuracy(cfg, &data, seed)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub skill_cot: bool,
    pub experts: bool,
    /// Mean test accuracy over seeds.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Order: full, skill CoT only, experts only, neither.
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, skill_cot: bool, experts: bool) -> f64 {
        self.cells
            .iter()
            .find(|c| c.skill_cot == skill_cot && c.experts == experts)
            .map_or(f64::NAN, |c| c.accuracy)
    }
}

/// Trains all four (skill CoT, experts) combinations on the same questions
/// and answers. Without experts the single adapter gets the full rank budget.
pub fn ablation(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<AblationReport> {
    let mut cells = Vec::new();
    for (skill_cot, experts) in [(true, true), (true, false), (false, true), (false, false)] {
        let mut run = cfg.clone();
        run.synthetic.skill_cot = skill_cot;
        let mut total = 0.0;
        for &seed in seeds {
            let data = generate_synthetic(&run.synthetic, seed);
            total += if experts {
                routed_accuracy(&run, &data, seed)?
            } else {
                shared_accuracy(&run, &data, seed)?
            };
        }
        cells.push(AblationCell {
            skill_cot,
            experts,
            accuracy: total / seeds.len().max(1) as f64,
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        cells,
    })
}
