//! Expert partitioning over question embeddings, nearest-centroid routing,
//! and the toy multi-adapter learner used to check the training objective.

mod specialization;
mod synthetic;
mod toy;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub use specialization::{
    ablation, eval_specialization, AblationCell, AblationReport, ExperimentConfig,
    SpecializationRow, SpecializationSummary,
};
pub use synthetic::{generate_synthetic, Mapping, SyntheticConfig, SyntheticData};
pub use toy::{
    adapter_gradients, combined_loss, evaluate, featurize_annotated, gradient_check, loss_terms,
    random_gradient_check, train_toy, AdapterGradients, EpochLoss, ExpertAdapters, LossTerms,
    LowRank, ToyDataset, ToyExpertModel, ToyModelConfig, TrainReport, DIVERGENCE_LOSS,
    FULL_SCALE_LEARNING_RATE, PROB_FLOOR, TOY_LEARNING_RATE_SCALE,
};

use crate::clustering::{fit_kmeans_detailed, CentroidModel, KMeansOptions};
use crate::corpus::{write_file, AnnotatedExample};
use crate::embedding::{Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::sections::{find, parse_sections};

pub const DEFAULT_N_EXPERTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPartition {
    pub n_experts: usize,
    pub centroid_model: CentroidModel,
    pub assignments: BTreeMap<String, usize>,
    pub encoder: EncoderSpec,
}

/// Clusters training questions into `n_experts` groups. `items` are
/// (example id, question) pairs.
pub fn partition_experts(
    items: &[(&str, &str)],
    n_experts: usize,
    seed: u64,
    encoder: &dyn Encoder,
    opts: &KMeansOptions,
) -> Result<ExpertPartition> {
    if items.len() < n_experts {
        return Err(Error::InvalidArgument(format!(
            "{} training examples cannot fill {n_experts} experts",
            items.len()
        )));
    }
    let questions: Vec<&str> = items.iter().map(|(_, q)| *q).collect();
    let points = encoder.embed_batch(&questions)?;
    let fit = fit_kmeans_detailed(&points, n_experts, seed, opts)?;
    let mut assignments = BTreeMap::new();
    for ((id, _), point) in items.iter().zip(&points) {
        let cluster = fit.model.assign(point.values())?.cluster;
        if assignments.insert(id.to_string(), cluster).is_some() {
            return Err(Error::InvalidArgument(format!(
                "example id {id:?} appears twice"
            )));
        }
    }
    Ok(ExpertPartition {
        n_experts,
        centroid_model: fit.model,
        assignments,
        encoder: encoder.spec().clone(),
    })
}

/// Expert whose question centroid is nearest the query.
pub fn route(question: &str, partition: &ExpertPartition, encoder: &dyn Encoder) -> Result<usize> {
    let q = encoder.embed(question)?;
    Ok(partition.centroid_model.assign(q.values())?.cluster)
}

/// Writes the partition's expert ids into matching annotations. Returns how
/// many records were updated.
pub fn backfill_expert_ids(
    partition: &ExpertPartition,
    annotated: &mut [AnnotatedExample],
) -> usize {
    let mut n = 0;
    for a in annotated.iter_mut() {
        if let Some(&e) = partition.assignments.get(&a.base.id) {
            a.expert_id = e as i64;
            n += 1;
        }
    }
    n
}

impl ExpertPartition {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# expert partition\n[encoder]\n");
        out.push_str(&serde_json::to_string(&self.encoder).expect("encoder spec serializes"));
        out.push_str("\n[centroids]\n");
        out.push_str(&self.centroid_model.to_text());
        out.push_str("[assignments]\n");
        for (id, e) in &self.assignments {
            out.push_str(&format!("{id}\t{e}\n"));
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
        let enc = find(&sections, "encoder", path)?;
        let (line, json) = enc
            .lines
            .first()
            .copied()
            .ok_or_else(|| Error::format(path, 0, "empty [encoder] section"))?;
        let encoder: EncoderSpec =
            serde_json::from_str(json).map_err(|e| Error::format(path, line, e.to_string()))?;
        let centroid_model =
            CentroidModel::from_section(find(&sections, "centroids", path)?, path)?;
        let mut assignments = BTreeMap::new();
        for &(line, content) in &find(&sections, "assignments", path)?.lines {
            let (id, e) = content
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(path, line, "expected id<TAB>expert"))?;
            let e: usize = e
                .parse()
                .map_err(|_| Error::format(path, line, "bad expert id"))?;
            if e >= centroid_model.k {
                return Err(Error::format(
                    path,
                    line,
                    format!("expert {e} out of range"),
                ));
            }
            if assignments.insert(id.to_string(), e).is_some() {
                return Err(Error::format(path, line, format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            n_experts: centroid_model.k,
            centroid_model,
            assignments,
            encoder,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEncoder;

    #[test]
    fn k_equals_n_is_bijective() {
        let enc = HashEncoder::new(16).unwrap();
        let items = [
            ("a", "how far is the red car"),
            ("b", "what happens after the door opens"),
            ("c", "why is the child crying"),
            ("d", "count the birds on the wire"),
            ("e", "which object is nearest the stove"),
        ];
        let p = partition_experts(&items, 5, 3, &enc, &KMeansOptions::default()).unwrap();
        let mut experts: Vec<usize> = p.assignments.values().copied().collect();
        experts.sort();
        assert_eq!(experts, vec![0, 1, 2, 3, 4]);
        for (id, q) in items {
            assert_eq!(route(q, &p, &enc).unwrap(), p.assignments[id]);
        }
        let back = ExpertPartition::parse(&p.to_text(), Path::new("p")).unwrap();
        assert_eq!(back.assignments, p.assignments);
        assert_eq!(back.to_text(), p.to_text());
    }

    #[test]
    fn too_few_examples() {
        let enc = HashEncoder::new(16).unwrap();
        assert!(partition_experts(&[("a", "q")], 2, 0, &enc, &KMeansOptions::default()).is_err());
    }
}
