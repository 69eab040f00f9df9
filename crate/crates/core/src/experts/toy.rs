//! Linear-softmax toy learner: a frozen random base per head plus one pair
//! of low-rank factors per expert and head, trained by full-batch gradient
//! descent on answer cross-entropy + λ · mean-over-positions CoT
//! cross-entropy.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::sig9;
use crate::corpus::{write_file, AnnotatedExample};
use crate::embedding::hash_embed;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Pcg64};
use crate::sections::{find, parse_floats, parse_sections};

/// Learning rate of the full-scale recipe; kept as provenance only.
pub const FULL_SCALE_LEARNING_RATE: f64 = 1e-5;
pub const TOY_LEARNING_RATE_SCALE: f64 = 100.0;
pub const DIVERGENCE_LOSS: f64 = 1e6;
pub const PROB_FLOOR: f64 = 1e-12;
const GRADCHECK_EXAMPLES: usize = 5;
const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub input_dim: usize,
    pub answer_classes: usize,
    pub cot_vocab: usize,
    pub cot_len: usize,
    pub adapter_rank: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Standard deviation of the frozen base entries.
    pub base_scale: f64,
    pub full_scale_learning_rate: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            answer_classes: 4,
            cot_vocab: 10,
            cot_len: 3,
            adapter_rank: 32,
            lambda: 0.5,
            learning_rate: FULL_SCALE_LEARNING_RATE * TOY_LEARNING_RATE_SCALE,
            epochs: 200,
            seed: 0,
            base_scale: 0.01,
            full_scale_learning_rate: FULL_SCALE_LEARNING_RATE,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("answer_classes", self.answer_classes),
            ("cot_vocab", self.cot_vocab),
            ("cot_len", self.cot_len),
            ("adapter_rank", self.adapter_rank),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.base_scale.is_finite() && self.base_scale >= 0.0) {
            return bad("base_scale must be finite and >= 0".into());
        }
        Ok(())
    }

    fn cot_rows(&self) -> usize {
        self.cot_len * self.cot_vocab
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub answer: f64,
    pub cot: f64,
    pub combined: f64,
}

/// `-ln p` with `p` floored at [`PROB_FLOOR`]. NaN passes through so a
/// blown-up model is not mistaken for a confident one.
fn clamped_nll(p: f64) -> f64 {
    if p.is_nan() {
        return p;
    }
    -p.max(PROB_FLOOR).ln()
}

/// Both cross-entropy terms for one example; probabilities are clamped at
/// [`PROB_FLOOR`] before the log.
pub fn loss_terms(
    answer_probs: &[f64],
    answer_target: usize,
    cot_probs: &[&[f64]],
    cot_targets: &[usize],
    lambda: f64,
) -> Result<LossTerms> {
    let shape = |m: String| Err(Error::InvalidArgument(m));
    if answer_target >= answer_probs.len() {
        return shape(format!(
            "answer target {answer_target} outside {} classes",
            answer_probs.len()
        ));
    }
    if cot_probs.is_empty() || cot_probs.len() != cot_targets.len() {
        return shape(format!(
            "{} CoT distributions for {} CoT targets",
            cot_probs.len(),
            cot_targets.len()
        ));
    }
    let nll = clamped_nll;
    let answer = nll(answer_probs[answer_target]);
    let mut cot = 0.0;
    for (t, (p, &y)) in cot_probs.iter().zip(cot_targets).enumerate() {
        if y >= p.len() {
            return shape(format!(
                "CoT target {y} at position {t} outside {} tokens",
                p.len()
            ));
        }
        cot += nll(p[y]);
    }
    cot /= cot_targets.len() as f64;
    Ok(LossTerms {
        answer,
        cot,
        combined: answer + lambda * cot,
    })
}

pub fn combined_loss(
    answer_probs: &[f64],
    answer_target: usize,
    cot_probs: &[&[f64]],
    cot_targets: &[usize],
    lambda: f64,
) -> Result<f64> {
    loss_terms(answer_probs, answer_target, cot_probs, cot_targets, lambda).map(|t| t.combined)
}

/// Additive update `a · b` with `a: rows×r` and `b: r×cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LowRank {
    /// `a` starts at zero so the adapted head equals the base; `b` is drawn
    /// with variance 1/r, which keeps E[bᵀb] = I for every rank.
    fn init(rows: usize, cols: usize, rank: usize, rng: &mut Pcg64) -> Self {
        let normal = Normal::new(0.0, (1.0 / rank as f64).sqrt()).expect("valid normal");
        Self {
            a: DMatrix::zeros(rows, rank),
            b: DMatrix::from_fn(rank, cols, |_, _| normal.sample(rng)),
        }
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.a * &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertAdapters {
    pub answer: LowRank,
    pub cot: LowRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExpertModel {
    pub config: ToyModelConfig,
    pub base_answer: DMatrix<f64>,
    pub base_cot: DMatrix<f64>,
    pub experts: Vec<ExpertAdapters>,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut Pcg64) -> DMatrix<f64> {
    if std == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, std).expect("valid normal");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

fn softmax_rows(z: &mut DMatrix<f64>, block: usize) {
    for i in 0..z.nrows() {
        for start in (0..z.ncols()).step_by(block) {
            let end = start + block;
            let max = (start..end)
                .map(|j| z[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in start..end {
                let e = (z[(i, j)] - max).exp();
                z[(i, j)] = e;
                sum += e;
            }
            for j in start..end {
                z[(i, j)] /= sum;
            }
        }
    }
}

/// A shard as dense matrices: `x` is n×d.
struct Batch {
    x: DMatrix<f64>,
    answers: Vec<usize>,
    cot: Vec<Vec<usize>>,
}

/// Mean-loss gradients with respect to one expert's adapter factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradients {
    pub answer_a: DMatrix<f64>,
    pub answer_b: DMatrix<f64>,
    pub cot_a: DMatrix<f64>,
    pub cot_b: DMatrix<f64>,
}

impl ToyExpertModel {
    pub fn new(config: ToyModelConfig, n_experts: usize) -> Result<Self> {
        config.validate()?;
        if n_experts == 0 {
            return Err(Error::InvalidArgument(
                "n_experts must be at least 1".into(),
            ));
        }
        let mut rng = seeded(derive_seed(config.seed, 0));
        let d = config.input_dim;
        let base_answer = gaussian(config.answer_classes, d, config.base_scale, &mut rng);
        let base_cot = gaussian(config.cot_rows(), d, config.base_scale, &mut rng);
        let experts = (0..n_experts)
            .map(|e| {
                let mut rng = seeded(derive_seed(config.seed, 1 + e as u64));
                ExpertAdapters {
                    answer: LowRank::init(config.answer_classes, d, config.adapter_rank, &mut rng),
                    cot: LowRank::init(config.cot_rows(), d, config.adapter_rank, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            config,
            base_answer,
            base_cot,
            experts,
        })
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    /// Replaces every adapter factor with Gaussian entries, so both factors
    /// carry gradient. Used by gradient checks.
    pub fn randomize_adapters(&mut self, seed: u64, std: f64) {
        let mut rng = seeded(seed);
        for e in &mut self.experts {
            for m in [&mut e.answer.a, &mut e.answer.b, &mut e.cot.a, &mut e.cot.b] {
                *m = gaussian(m.nrows(), m.ncols(), std, &mut rng);
            }
        }
    }

    /// Answer probabilities (n×V_a) and CoT probabilities (n×T·V_c, softmax
    /// per position block) for expert `e`.
    fn forward(&self, e: usize, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let adapters = &self.experts[e];
        let wa = &self.base_answer + adapters.answer.product();
        let wc = &self.base_cot + adapters.cot.product();
        let mut pa = x * wa.transpose();
        let mut pc = x * wc.transpose();
        softmax_rows(&mut pa, self.config.answer_classes);
        softmax_rows(&mut pc, self.config.cot_vocab);
        (pa, pc)
    }

    fn batch_loss(&self, e: usize, batch: &Batch) -> LossTerms {
        let (pa, pc) = self.forward(e, &batch.x);
        batch_terms(&self.config, &pa, &pc, batch)
    }

    fn gradients(&self, e: usize, batch: &Batch) -> (LossTerms, AdapterGradients) {
        let cfg = &self.config;
        let (pa, pc) = self.forward(e, &batch.x);
        let terms = batch_terms(cfg, &pa, &pc, batch);
        let n = batch.x.nrows() as f64;
        let mut da = pa;
        let mut dc = pc;
        for i in 0..batch.answers.len() {
            da[(i, batch.answers[i])] -= 1.0;
            for (t, &y) in batch.cot[i].iter().enumerate() {
                dc[(i, t * cfg.cot_vocab + y)] -= 1.0;
            }
        }
        let ga = da.transpose() * &batch.x / n;
        let gc = dc.transpose() * &batch.x * (cfg.lambda / (cfg.cot_len as f64 * n));
        let ad = &self.experts[e];
        let grads = AdapterGradients {
            answer_a: &ga * ad.answer.b.transpose(),
            answer_b: ad.answer.a.transpose() * &ga,
            cot_a: &gc * ad.cot.b.transpose(),
            cot_b: ad.cot.a.transpose() * &gc,
        };
        (terms, grads)
    }

    pub fn predict(&self, expert: usize, features: &[f64]) -> Result<usize> {
        if expert >= self.experts.len() {
            return Err(Error::InvalidArgument(format!("no expert {expert}")));
        }
        if features.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: features.len(),
            });
        }
        let x = DMatrix::from_row_slice(1, features.len(), features);
        let (pa, _) = self.forward(expert, &x);
        Ok(argmax(pa.row(0).iter().copied()))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn batch_terms(
    cfg: &ToyModelConfig,
    pa: &DMatrix<f64>,
    pc: &DMatrix<f64>,
    batch: &Batch,
) -> LossTerms {
    let nll = clamped_nll;
    let n = batch.answers.len() as f64;
    let mut answer = 0.0;
    let mut cot = 0.0;
    for i in 0..batch.answers.len() {
        answer += nll(pa[(i, batch.answers[i])]);
        let mut c = 0.0;
        for (t, &y) in batch.cot[i].iter().enumerate() {
            c += nll(pc[(i, t * cfg.cot_vocab + y)]);
        }
        cot += c / cfg.cot_len as f64;
    }
    let (answer, cot) = (answer / n, cot / n);
    LossTerms {
        answer,
        cot,
        combined: answer + cfg.lambda * cot,
    }
}

/// Featurized examples: `features[i]` has `input_dim` entries and
/// `cot_targets[i]` has `cot_len` token ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyDataset {
    pub features: Vec<Vec<f64>>,
    pub answers: Vec<usize>,
    pub cot_targets: Vec<Vec<usize>>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn validate(&self, cfg: &ToyModelConfig) -> Result<()> {
        if self.features.len() != self.answers.len() || self.cot_targets.len() != self.answers.len()
        {
            return Err(Error::InvalidArgument(
                "dataset columns differ in length".into(),
            ));
        }
        for i in 0..self.len() {
            let fail = |m: String| Err(Error::InvalidArgument(format!("example {i}: {m}")));
            if self.features[i].len() != cfg.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.input_dim,
                    found: self.features[i].len(),
                });
            }
            if self.features[i].iter().any(|v| !v.is_finite()) {
                return fail("non-finite feature".into());
            }
            if self.answers[i] >= cfg.answer_classes {
                return fail(format!(
                    "answer {} outside {} classes",
                    self.answers[i], cfg.answer_classes
                ));
            }
            if self.cot_targets[i].len() != cfg.cot_len {
                return fail(format!(
                    "{} CoT targets, expected {}",
                    self.cot_targets[i].len(),
                    cfg.cot_len
                ));
            }
            if let Some(t) = self.cot_targets[i].iter().find(|&&t| t >= cfg.cot_vocab) {
                return fail(format!(
                    "CoT token {t} outside vocabulary of {}",
                    cfg.cot_vocab
                ));
            }
        }
        Ok(())
    }

    fn batch(&self, indices: &[usize]) -> Batch {
        let d = self.features.first().map_or(0, Vec::len);
        Batch {
            x: DMatrix::from_fn(indices.len(), d, |r, c| self.features[indices[r]][c]),
            answers: indices.iter().map(|&i| self.answers[i]).collect(),
            cot: indices
                .iter()
                .map(|&i| self.cot_targets[i].clone())
                .collect(),
        }
    }
}

/// Features are test_hash embeddings of question plus merged CoT; the answer
/// class is the answer's position among the choices; CoT targets are the
/// selected skill ids.
pub fn featurize_annotated(examples: &[AnnotatedExample], dims: usize) -> Result<ToyDataset> {
    let mut data = ToyDataset::default();
    for e in examples {
        let answer = e.base.answer_index().ok_or_else(|| Error::InvalidRecord {
            id: e.base.id.clone(),
            message: "toy training needs multiple-choice examples".into(),
        })?;
        let text = format!("{} {}", e.base.question, e.cot.merged_paragraph);
        data.features.push(hash_embed(&text, dims).0);
        data.answers.push(answer);
        data.cot_targets.push(e.skill_ids.clone());
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub expert: usize,
    pub answer: f64,
    pub cot: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss before each update, expert-major.
    pub epochs: Vec<EpochLoss>,
    pub shard_sizes: Vec<usize>,
    /// Training accuracy per expert; `None` for an empty shard.
    pub expert_accuracy: Vec<Option<f64>>,
    pub pooled_accuracy: f64,
    pub gradient_check_max_rel_err: f64,
}

impl TrainReport {
    pub fn losses_of(&self, expert: usize) -> Vec<EpochLoss> {
        self.epochs
            .iter()
            .copied()
            .filter(|l| l.expert == expert)
            .collect()
    }
}

struct ExpertRun {
    adapters: ExpertAdapters,
    losses: Vec<EpochLoss>,
    correct: usize,
    grad_err: f64,
}

fn train_expert(
    model: &ToyExpertModel,
    e: usize,
    data: &ToyDataset,
    shard: &[usize],
) -> Result<ExpertRun> {
    let cfg = &model.config;
    let mut local = ToyExpertModel {
        config: cfg.clone(),
        base_answer: model.base_answer.clone(),
        base_cot: model.base_cot.clone(),
        experts: vec![model.experts[e].clone()],
    };
    if shard.is_empty() {
        return Ok(ExpertRun {
            adapters: model.experts[e].clone(),
            losses: Vec::new(),
            correct: 0,
            grad_err: 0.0,
        });
    }
    let batch = data.batch(shard);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (terms, g) = local.gradients(0, &batch);
        if !terms.combined.is_finite() || terms.combined > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                expert: e,
                epoch,
                loss: terms.combined,
            });
        }
        losses.push(EpochLoss {
            epoch,
            expert: e,
            answer: terms.answer,
            cot: terms.cot,
            combined: terms.combined,
        });
        let lr = cfg.learning_rate;
        let ad = &mut local.experts[0];
        ad.answer.a -= g.answer_a * lr;
        ad.answer.b -= g.answer_b * lr;
        ad.cot.a -= g.cot_a * lr;
        ad.cot.b -= g.cot_b * lr;
    }
    let correct = shard
        .iter()
        .map(|&i| {
            local
                .predict(0, &data.features[i])
                .map(|p| (p == data.answers[i]) as usize)
        })
        .sum::<Result<usize>>()?;
    let check = data.batch(&shard[..shard.len().min(GRADCHECK_EXAMPLES)]);
    let grad_err = check_expert(&local, 0, &check, GRADCHECK_STEP);
    Ok(ExpertRun {
        adapters: local.experts.pop().expect("one expert"),
        losses,
        correct,
        grad_err,
    })
}

/// Trains every expert on its own shard (`assignments[i]` is example i's
/// expert). Experts train in parallel; results merge by expert index.
pub fn train_toy(
    data: &ToyDataset,
    assignments: &[usize],
    n_experts: usize,
    config: &ToyModelConfig,
) -> Result<(ToyExpertModel, TrainReport)> {
    data.validate(config)?;
    if assignments.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments for {} examples",
            assignments.len(),
            data.len()
        )));
    }
    if let Some(&e) = assignments.iter().find(|&&e| e >= n_experts) {
        return Err(Error::InvalidArgument(format!(
            "assignment to expert {e} of {n_experts}"
        )));
    }
    let mut model = ToyExpertModel::new(config.clone(), n_experts)?;
    let shards: Vec<Vec<usize>> = (0..n_experts)
        .map(|e| (0..data.len()).filter(|&i| assignments[i] == e).collect())
        .collect();
    let runs = (0..n_experts)
        .into_par_iter()
        .map(|e| train_expert(&model, e, data, &shards[e]))
        .collect::<Result<Vec<_>>>()?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        shard_sizes: shards.iter().map(Vec::len).collect(),
        expert_accuracy: Vec::new(),
        pooled_accuracy: 0.0,
        gradient_check_max_rel_err: 0.0,
    };
    let mut correct = 0;
    for (e, run) in runs.into_iter().enumerate() {
        model.experts[e] = run.adapters;
        report.epochs.extend(run.losses);
        let n = shards[e].len();
        report
            .expert_accuracy
            .push((n > 0).then(|| run.correct as f64 / n as f64));
        correct += run.correct;
        report.gradient_check_max_rel_err = report.gradient_check_max_rel_err.max(run.grad_err);
    }
    report.pooled_accuracy = if data.is_empty() {
        0.0
    } else {
        correct as f64 / data.len() as f64
    };
    Ok((model, report))
}

/// Pooled accuracy with each example scored by its routed expert.
pub fn evaluate(model: &ToyExpertModel, data: &ToyDataset, routes: &[usize]) -> Result<f64> {
    if routes.len() != data.len() {
        return Err(Error::InvalidArgument(
            "one route per example required".into(),
        ));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let correct = data
        .features
        .iter()
        .zip(&data.answers)
        .zip(routes)
        .map(|((x, &y), &e)| model.predict(e, x).map(|p| (p == y) as usize))
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / data.len() as f64)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn check_expert(model: &ToyExpertModel, e: usize, batch: &Batch, h: f64) -> f64 {
    let (_, g) = model.gradients(e, batch);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let analytic = [&g.answer_a, &g.answer_b, &g.cot_a, &g.cot_b];
    for (which, grad) in analytic.into_iter().enumerate() {
        for idx in 0..grad.len() {
            let orig = factor(&probe, e, which)[idx];
            factor_mut(&mut probe, e, which)[idx] = orig + h;
            let up = probe.batch_loss(e, batch).combined;
            factor_mut(&mut probe, e, which)[idx] = orig - h;
            let down = probe.batch_loss(e, batch).combined;
            factor_mut(&mut probe, e, which)[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grad[idx], numeric));
        }
    }
    worst
}

fn factor(m: &ToyExpertModel, e: usize, which: usize) -> &DMatrix<f64> {
    let ad = &m.experts[e];
    [&ad.answer.a, &ad.answer.b, &ad.cot.a, &ad.cot.b][which]
}

fn factor_mut(m: &mut ToyExpertModel, e: usize, which: usize) -> &mut DMatrix<f64> {
    let ad = &mut m.experts[e];
    match which {
        0 => &mut ad.answer.a,
        1 => &mut ad.answer.b,
        2 => &mut ad.cot.a,
        _ => &mut ad.cot.b,
    }
}

/// Max relative error between analytic adapter gradients and central finite
/// differences with step `h`, over every factor entry of expert `e`.
pub fn gradient_check(model: &ToyExpertModel, e: usize, data: &ToyDataset, h: f64) -> Result<f64> {
    data.validate(&model.config)?;
    if e >= model.expert_count() || data.is_empty() {
        return Err(Error::InvalidArgument(
            "gradient check needs an expert and a non-empty batch".into(),
        ));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(check_expert(model, e, &data.batch(&all), h))
}

/// Loss of expert `e` over all of `data`, with its analytic gradients.
pub fn adapter_gradients(
    model: &ToyExpertModel,
    e: usize,
    data: &ToyDataset,
) -> Result<(LossTerms, AdapterGradients)> {
    data.validate(&model.config)?;
    if e >= model.expert_count() || data.is_empty() {
        return Err(Error::InvalidArgument(
            "gradients need an expert and a non-empty batch".into(),
        ));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(model.gradients(e, &data.batch(&all)))
}

/// Gradient check on a fresh model with random adapters and five random
/// examples, all drawn from `seed`.
pub fn random_gradient_check(config: &ToyModelConfig, seed: u64) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut model = ToyExpertModel::new(cfg.clone(), 1)?;
    model.randomize_adapters(derive_seed(seed, 101), 0.3);
    let mut rng = seeded(derive_seed(seed, 102));
    let x = gaussian(GRADCHECK_EXAMPLES, cfg.input_dim, 1.0, &mut rng);
    use rand::RngExt;
    let data = ToyDataset {
        features: (0..GRADCHECK_EXAMPLES)
            .map(|i| x.row(i).iter().copied().collect())
            .collect(),
        answers: (0..GRADCHECK_EXAMPLES)
            .map(|_| rng.random_range(0..cfg.answer_classes))
            .collect(),
        cot_targets: (0..GRADCHECK_EXAMPLES)
            .map(|_| {
                (0..cfg.cot_len)
                    .map(|_| rng.random_range(0..cfg.cot_vocab))
                    .collect()
            })
            .collect(),
    };
    gradient_check(&model, 0, &data, GRADCHECK_STEP)
}

fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("[{name}]\nshape {} {}\n", m.nrows(), m.ncols()));
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| sig9(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn read_matrix(
    sections: &[crate::sections::Section<'_>],
    name: &str,
    path: &Path,
) -> Result<DMatrix<f64>> {
    let s = find(sections, name, path)?;
    let (&(line, header), rows) = s
        .lines
        .split_first()
        .ok_or_else(|| Error::format(path, 0, format!("[{name}] is empty")))?;
    let dims: Vec<usize> = header
        .strip_prefix("shape ")
        .map(|r| {
            r.split_whitespace()
                .filter_map(|t| t.parse().ok())
                .collect()
        })
        .unwrap_or_default();
    let [nr, nc] = dims[..] else {
        return Err(Error::format(path, line, "expected `shape <rows> <cols>`"));
    };
    if rows.len() != nr {
        return Err(Error::format(
            path,
            line,
            format!("[{name}] expects {nr} rows, found {}", rows.len()),
        ));
    }
    let mut values = Vec::with_capacity(nr * nc);
    for &(line, content) in rows {
        let row = parse_floats(content, path, line)?;
        if row.len() != nc {
            return Err(Error::format(path, line, format!("expected {nc} values")));
        }
        values.extend(row);
    }
    Ok(DMatrix::from_row_slice(nr, nc, &values))
}

impl ToyExpertModel {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# toy expert model\n[config]\n");
        out.push_str(&serde_json::to_string(&self.config).expect("config serializes"));
        out.push_str(&format!("\n[experts]\n{}\n", self.experts.len()));
        push_matrix(&mut out, "base_answer", &self.base_answer);
        push_matrix(&mut out, "base_cot", &self.base_cot);
        for (e, ad) in self.experts.iter().enumerate() {
            push_matrix(&mut out, &format!("expert.{e}.answer.a"), &ad.answer.a);
            push_matrix(&mut out, &format!("expert.{e}.answer.b"), &ad.answer.b);
            push_matrix(&mut out, &format!("expert.{e}.cot.a"), &ad.cot.a);
            push_matrix(&mut out, &format!("expert.{e}.cot.b"), &ad.cot.b);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let sections = parse_sections(text, path)?;
        let first = |name: &str| -> Result<(usize, &str)> {
            find(&sections, name, path)?
                .lines
                .first()
                .copied()
                .ok_or_else(|| Error::format(path, 0, format!("[{name}] is empty")))
        };
        let (line, json) = first("config")?;
        let config: ToyModelConfig =
            serde_json::from_str(json).map_err(|e| Error::format(path, line, e.to_string()))?;
        let (line, n) = first("experts")?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line, "bad expert count"))?;
        let experts = (0..n)
            .map(|e| {
                let m = |part: &str| read_matrix(&sections, &format!("expert.{e}.{part}"), path);
                Ok(ExpertAdapters {
                    answer: LowRank {
                        a: m("answer.a")?,
                        b: m("answer.b")?,
                    },
                    cot: LowRank {
                        a: m("cot.a")?,
                        b: m("cot.b")?,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base_answer: read_matrix(&sections, "base_answer", path)?,
            base_cot: read_matrix(&sections, "base_cot", path)?,
            config,
            experts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_loss_is_one_and_a_half_ln4() {
        let u = [0.25; 4];
        let cot: Vec<&[f64]> = vec![&u, &u, &u];
        let l = combined_loss(&u, 2, &cot, &[0, 1, 3], 0.5).unwrap();
        assert!((l - 1.5 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 2.0794415).abs() < 1e-7);
    }

    #[test]
    fn perfect_and_lambda_zero() {
        let one = [0.0, 1.0];
        assert_eq!(combined_loss(&one, 1, &[&one], &[1], 0.5).unwrap(), 0.0);
        let p = [0.2, 0.8];
        let t = loss_terms(&p, 0, &[&p], &[0], 0.0).unwrap();
        assert_eq!(t.combined, t.answer);
        assert!(combined_loss(&p, 2, &[&p], &[0], 0.5).is_err());
        assert!(combined_loss(&p, 0, &[&p], &[0, 1], 0.5).is_err());
    }

    #[test]
    fn clamped_log_is_finite() {
        let p = [1.0, 0.0];
        let l = combined_loss(&p, 1, &[&p], &[1], 1.0).unwrap();
        assert!((l - 2.0 * -(PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn adapters_start_at_base() {
        let m = ToyExpertModel::new(ToyModelConfig::default(), 2).unwrap();
        assert!(m.experts[1].answer.product().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ToyModelConfig {
            input_dim: 6,
            answer_classes: 3,
            cot_vocab: 4,
            cot_len: 2,
            adapter_rank: 3,
            ..ToyModelConfig::default()
        };
        for seed in 0..3 {
            let err = random_gradient_check(&cfg, seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn model_text_round_trip() {
        let cfg = ToyModelConfig {
            input_dim: 3,
            answer_classes: 2,
            cot_vocab: 2,
            cot_len: 1,
            adapter_rank: 2,
            ..ToyModelConfig::default()
        };
        let m = ToyExpertModel::new(cfg, 2).unwrap();
        let text = m.to_text();
        let back = ToyExpertModel::parse(&text, Path::new("m")).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.experts.len(), 2);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ToyModelConfig {
            input_dim: 2,
            answer_classes: 2,
            cot_vocab: 2,
            cot_len: 1,
            adapter_rank: 2,
            learning_rate: 1.0,
            epochs: 20,
            ..ToyModelConfig::default()
        };
        let data = ToyDataset {
            features: vec![vec![1e200, -1e200], vec![-1e200, 1e200]],
            answers: vec![0, 1],
            cot_targets: vec![vec![1], vec![0]],
        };
        let err = train_toy(&data, &[0, 0], 1, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
