//! Skill descriptions, the shared skill taxonomy, and top-K skill selection.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{fit_kmeans_detailed, squared_distance, CentroidModel, KMeansOptions};
use crate::corpus::{write_file, VideoQAExample};
use crate::embedding::{cosine, EmbeddingVector, Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::llmclient::{LlmClient, LlmRequest, SKILL_DESCRIBE, SKILL_SELECT};
use crate::sections::{find, parse_sections};

pub const MIN_PHRASE_WORDS: usize = 6;
pub const MAX_PHRASE_WORDS: usize = 12;
pub const DEFAULT_N_SKILLS: usize = 10;
pub const DEFAULT_TOP_K: usize = 3;

/// Tokens that mark an audio cue. Matched as word prefixes ("sounds",
/// "soundtrack", "musical").
pub const AUDIO_TERMS: &[&str] = &["sound", "speech", "music", "audio", "voice", "acoustic"];
/// Vague terms, matched as whole words.
pub const VAGUE_TERMS: &[&str] = &["reasoning", "analysis", "analyses"];

#[derive(Debug, Clone, PartialEq)]
pub struct SkillDescription {
    pub text: String,
    pub source_example_id: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhraseViolation {
    WordCount(usize),
    AudioTerm(String),
    VagueTerm(String),
    MultiLine,
}

impl std::fmt::Display for PhraseViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhraseViolation::WordCount(n) => write!(
                f,
                "the phrase has {n} words; it must have {MIN_PHRASE_WORDS} to {MAX_PHRASE_WORDS}"
            ),
            PhraseViolation::AudioTerm(t) => write!(f, "the phrase relies on an audio cue ({t:?})"),
            PhraseViolation::VagueTerm(t) => write!(f, "the phrase uses the vague term {t:?}"),
            PhraseViolation::MultiLine => write!(f, "the reply spans several lines"),
        }
    }
}

/// Trims whitespace and one layer of surrounding quotes.
pub fn clean_phrase(raw: &str) -> String {
    let t = raw.trim();
    let t = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| t.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
        .unwrap_or(t);
    t.trim().to_string()
}

pub fn validate_skill_phrase(phrase: &str) -> Result<(), PhraseViolation> {
    if phrase.lines().filter(|l| !l.trim().is_empty()).count() > 1 {
        return Err(PhraseViolation::MultiLine);
    }
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if !(MIN_PHRASE_WORDS..=MAX_PHRASE_WORDS).contains(&words.len()) {
        return Err(PhraseViolation::WordCount(words.len()));
    }
    for word in &words {
        let token = word
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        if let Some(term) = AUDIO_TERMS.iter().find(|t| token.starts_with(*t)) {
            return Err(PhraseViolation::AudioTerm(term.to_string()));
        }
        if let Some(term) = VAGUE_TERMS.iter().find(|t| token == **t) {
            return Err(PhraseViolation::VagueTerm(term.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Ok,
    SkillExtractionFailed,
}

/// One line of the skill-description file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSkill {
    pub source_example_id: String,
    /// The accepted phrase, or the last rejected reply.
    pub text: String,
    pub status: ExtractionStatus,
    pub attempts: u32,
    /// Why each rejected reply was rejected, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
}

fn format_choices(example: &VideoQAExample) -> String {
    example
        .choices
        .as_ref()
        .map(|c| c.join(" | "))
        .unwrap_or_else(|| "(open-ended)".to_string())
}

pub fn phrase_correction(previous: &str, violation: &PhraseViolation) -> String {
    format!(
        "\n\nYour previous reply {previous:?} was rejected: {violation}. Reply with one skill phrase of \
         {MIN_PHRASE_WORDS} to {MAX_PHRASE_WORDS} words naming a visual or temporal skill, with no audio cues \
         and no vague terms."
    )
}

/// Asks the LLM for the example's skill phrase, enforcing the phrase rules
/// with one corrective retry.
pub fn extract_skill(
    example: &VideoQAExample,
    client: &LlmClient,
    model_id: &str,
) -> Result<ExtractedSkill> {
    let base = LlmRequest::new(SKILL_DESCRIBE, model_id)
        .var("question", &example.question)
        .var("answer", &example.answer)
        .var("choices", format_choices(example));
    let mut request = base.clone();
    let mut rejections = Vec::new();
    let mut text = String::new();
    for attempt in 1..=2u32 {
        text = clean_phrase(&client.cached_complete(&request)?);
        match validate_skill_phrase(&text) {
            Ok(()) => {
                return Ok(ExtractedSkill {
                    source_example_id: example.id.clone(),
                    text,
                    status: ExtractionStatus::Ok,
                    attempts: attempt,
                    rejections,
                })
            }
            Err(v) => {
                request = base.clone().with_suffix(phrase_correction(&text, &v));
                rejections.push(v.to_string());
            }
        }
    }
    Ok(ExtractedSkill {
        source_example_id: example.id.clone(),
        text,
        status: ExtractionStatus::SkillExtractionFailed,
        attempts: 2,
        rejections,
    })
}

/// [`extract_skill`] over a corpus, in parallel; output follows input order.
pub fn extract_skills(
    examples: &[VideoQAExample],
    client: &LlmClient,
    model_id: &str,
) -> Result<Vec<ExtractedSkill>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(index, e)| {
            extract_skill(e, client, model_id).map_err(|source| Error::Indexed {
                index,
                source: Box::new(source),
            })
        })
        .collect()
}

/// Embeds the accepted phrases; failed extractions are skipped.
pub fn describe(
    extracted: &[ExtractedSkill],
    encoder: &dyn Encoder,
) -> Result<Vec<SkillDescription>> {
    let ok: Vec<&ExtractedSkill> = extracted
        .iter()
        .filter(|e| e.status == ExtractionStatus::Ok)
        .collect();
    let texts: Vec<&str> = ok.iter().map(|e| e.text.as_str()).collect();
    let vectors = encoder.embed_batch(&texts)?;
    Ok(ok
        .into_iter()
        .zip(vectors)
        .map(|(e, embedding)| SkillDescription {
            text: e.text.clone(),
            source_example_id: e.source_example_id.clone(),
            embedding,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillTaxonomy {
    pub n_skills: usize,
    pub centroid_model: CentroidModel,
    pub representative_phrases: Vec<String>,
    pub member_counts: Vec<usize>,
    pub encoder: EncoderSpec,
}

/// Clusters description embeddings into `n_skills` skills. Each skill is
/// named by its member nearest the centroid (ties: smallest text).
pub fn build_taxonomy(
    descriptions: &[SkillDescription],
    n_skills: usize,
    seed: u64,
    encoder: &EncoderSpec,
) -> Result<SkillTaxonomy> {
    if descriptions.len() < n_skills {
        return Err(Error::InvalidArgument(format!(
            "{} skill descriptions cannot form {n_skills} skills; lower n_skills to at most {}",
            descriptions.len(),
            descriptions.len()
        )));
    }
    let points: Vec<&[f64]> = descriptions.iter().map(|d| d.embedding.values()).collect();
    let fit = fit_kmeans_detailed(&points, n_skills, seed, &KMeansOptions::default())?;
    let mut member_counts = vec![0usize; n_skills];
    let mut best: Vec<Option<(f64, &str)>> = vec![None; n_skills];
    for (d, &label) in descriptions.iter().zip(&fit.labels) {
        member_counts[label] += 1;
        let dist = squared_distance(d.embedding.values(), &fit.model.centroids[label]);
        let better = match best[label] {
            None => true,
            Some((bd, bt)) => dist < bd || (dist == bd && d.text.as_str() < bt),
        };
        if better {
            best[label] = Some((dist, &d.text));
        }
    }
    let representative_phrases = best
        .into_iter()
        .enumerate()
        .map(|(j, b)| match b {
            Some((_, text)) => text.to_string(),
            // only reachable when Lloyd stopped at max_iterations with an empty cluster
            None => nearest_text(descriptions, &fit.model.centroids[j]),
        })
        .collect();
    Ok(SkillTaxonomy {
        n_skills,
        centroid_model: fit.model,
        representative_phrases,
        member_counts,
        encoder: encoder.clone(),
    })
}

fn nearest_text(descriptions: &[SkillDescription], centroid: &[f64]) -> String {
    descriptions
        .iter()
        .map(|d| (squared_distance(d.embedding.values(), centroid), &d.text))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, t)| t.clone())
        .unwrap_or_default()
}

impl SkillTaxonomy {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# skill taxonomy\n[encoder]\n");
        out.push_str(&serde_json::to_string(&self.encoder).expect("encoder spec serializes"));
        out.push_str("\n[centroids]\n");
        out.push_str(&self.centroid_model.to_text());
        out.push_str("[phrases]\n");
        for (i, (phrase, count)) in self
            .representative_phrases
            .iter()
            .zip(&self.member_counts)
            .enumerate()
        {
            out.push_str(&format!("{i}\t{count}\t{phrase}\n"));
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
        let mut representative_phrases = Vec::new();
        let mut member_counts = Vec::new();
        for &(line, content) in &find(&sections, "phrases", path)?.lines {
            let mut parts = content.splitn(3, '\t');
            let (Some(index), Some(count), Some(phrase)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::format(
                    path,
                    line,
                    "expected index<TAB>count<TAB>phrase",
                ));
            };
            if index.parse::<usize>().ok() != Some(representative_phrases.len()) {
                return Err(Error::format(
                    path,
                    line,
                    "phrase rows must be numbered from 0 in order",
                ));
            }
            member_counts.push(
                count
                    .parse()
                    .map_err(|_| Error::format(path, line, "bad member count"))?,
            );
            representative_phrases.push(phrase.to_string());
        }
        if representative_phrases.len() != centroid_model.k {
            return Err(Error::format(
                path,
                0,
                "phrase table and centroid count differ",
            ));
        }
        Ok(Self {
            n_skills: centroid_model.k,
            centroid_model,
            representative_phrases,
            member_counts,
            encoder,
        })
    }

    /// Cosine of `question_embedding` against every skill centroid.
    pub fn scores(&self, question_embedding: &[f64]) -> Result<Vec<f64>> {
        self.centroid_model
            .centroids
            .iter()
            .map(|c| cosine(question_embedding, c))
            .collect()
    }

    /// `SKILL <i>: <phrase>` lines for the given skills.
    pub fn skill_lines(&self, ids: impl IntoIterator<Item = usize>) -> String {
        ids.into_iter()
            .map(|i| format!("SKILL {i}: {}", self.representative_phrases[i]))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    #[default]
    Embedding,
    Llm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillSelection {
    pub example_id: String,
    pub skill_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub method: SelectionMethod,
}

/// Indices of the `k` largest scores, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

/// Parses the first `SKILLS: i, j, ...` line; keeps valid distinct indices.
pub fn parse_skill_list(response: &str, n_skills: usize, k: usize) -> Option<Vec<usize>> {
    let line = response.lines().find_map(|l| {
        let t = l.trim();
        t.get(..7)
            .filter(|p| p.eq_ignore_ascii_case("skills:"))
            .map(|_| &t[7..])
    })?;
    let mut ids = Vec::new();
    for part in line.split([',', ' ']).filter(|p| !p.is_empty()) {
        let idx: usize = part.trim().parse().ok()?;
        if idx < n_skills && !ids.contains(&idx) && ids.len() < k {
            ids.push(idx);
        }
    }
    (!ids.is_empty()).then_some(ids)
}

pub struct SelectionContext<'a> {
    pub taxonomy: &'a SkillTaxonomy,
    pub encoder: &'a dyn Encoder,
    pub client: Option<&'a LlmClient>,
    pub model_id: &'a str,
}

pub fn select_skills(
    example_id: &str,
    question: &str,
    k: usize,
    method: SelectionMethod,
    ctx: &SelectionContext<'_>,
) -> Result<SkillSelection> {
    let taxonomy = ctx.taxonomy;
    let want = k.min(taxonomy.n_skills);
    let q = ctx.encoder.embed(question)?;
    let scores = taxonomy.scores(q.values())?;
    let ranked = top_k(&scores, taxonomy.n_skills);

    let mut used = SelectionMethod::Embedding;
    let mut chosen: Vec<usize> = ranked[..want].to_vec();
    if method == SelectionMethod::Llm {
        let client = ctx
            .client
            .ok_or_else(|| Error::Config("llm skill selection requires an LLM client".into()))?;
        let base = LlmRequest::new(SKILL_SELECT, ctx.model_id)
            .var("question", question)
            .var("skills", taxonomy.skill_lines(0..taxonomy.n_skills))
            .var("k", want.to_string());
        let mut request = base.clone();
        for _ in 0..2 {
            let response = client.cached_complete(&request)?;
            if let Some(ids) = parse_skill_list(&response, taxonomy.n_skills, want) {
                let mut picked = ids;
                for &i in &ranked {
                    if picked.len() >= want {
                        break;
                    }
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
                picked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                chosen = picked;
                used = SelectionMethod::Llm;
                break;
            }
            request = base.clone().with_suffix(format!(
                "\n\nYour previous reply could not be parsed. Reply with exactly one line: SKILLS: <index>, \
                 <index>, <index> using indices between 0 and {}.",
                taxonomy.n_skills - 1
            ));
        }
    }
    Ok(SkillSelection {
        example_id: example_id.to_string(),
        scores: chosen.iter().map(|&i| scores[i]).collect(),
        skill_ids: chosen,
        method: used,
    })
}
