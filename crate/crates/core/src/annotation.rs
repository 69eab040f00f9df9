//! Skill-conditioned CoT annotation: sub-QA generation, merging into one
//! paragraph, and step-level verification against the ground-truth answer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::round6;
use crate::corpus::{AnnotatedExample, Verification, VideoQAExample, UNASSIGNED_EXPERT};
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::llmclient::{LlmClient, LlmRequest, FILTER_COT, MERGE_COT, SKILL_SELECT_SUBQA};
use crate::taxonomy::{
    select_skills, SelectionContext, SelectionMethod, SkillSelection, SkillTaxonomy,
};

pub const DEFAULT_MAX_STEPS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQA {
    pub step_index: usize,
    pub skill_id: usize,
    pub sub_question: String,
    pub sub_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Raw,
    Verified,
    FilteredOut,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTTrace {
    pub steps: Vec<SubQA>,
    pub merged_paragraph: String,
    pub kept_step_indices: Vec<usize>,
    pub status: TraceStatus,
    /// Degradations along the way, e.g. `merge_fallback`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl CoTTrace {
    fn failed(flag: &str) -> Self {
        Self {
            steps: Vec::new(),
            merged_paragraph: String::new(),
            kept_step_indices: Vec::new(),
            status: TraceStatus::Unverified,
            flags: vec![flag.to_string()],
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if let Some((i, s)) = self
            .steps
            .iter()
            .enumerate()
            .find(|(i, s)| s.step_index != *i)
        {
            return Err(format!(
                "step at position {i} carries step_index {}",
                s.step_index
            ));
        }
        if self.kept_step_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err("kept_step_indices are not strictly increasing".into());
        }
        if self
            .kept_step_indices
            .iter()
            .any(|&k| k >= self.steps.len())
        {
            return Err("kept_step_indices reference a missing step".into());
        }
        match self.status {
            TraceStatus::Verified if self.kept_step_indices.is_empty() => {
                Err("verified trace keeps no steps".into())
            }
            TraceStatus::FilteredOut if !self.kept_step_indices.is_empty() => {
                Err("filtered_out trace still keeps steps".into())
            }
            _ => Ok(()),
        }
    }

    pub fn kept_steps(&self) -> Vec<&SubQA> {
        self.kept_step_indices
            .iter()
            .map(|&i| &self.steps[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepVerdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub step_verdicts: Vec<StepVerdict>,
    pub rationale: String,
    pub parser_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    Deterministic,
    Llm,
}

/// Model ids per pipeline role. Generation gets the video attachment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelRoles {
    pub describe: String,
    pub select: String,
    pub generate: String,
    pub merge: String,
    pub filter: String,
}

impl Default for ModelRoles {
    fn default() -> Self {
        Self {
            describe: "gpt-4-32k".into(),
            select: "gemini-2.0-flash".into(),
            generate: "gemini-2.0-flash".into(),
            merge: "gpt-4-32k".into(),
            filter: "gpt-4-32k".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    pub top_k: usize,
    pub max_steps: usize,
    pub selection: SelectionMethod,
    pub merge: MergeMode,
    pub models: ModelRoles,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            top_k: crate::taxonomy::DEFAULT_TOP_K,
            max_steps: DEFAULT_MAX_STEPS,
            selection: SelectionMethod::Embedding,
            merge: MergeMode::Deterministic,
            models: ModelRoles::default(),
        }
    }
}

/// Parses numbered `SKILL:` / `SUBQ:` / `SUBA:` blocks. Malformed blocks and
/// blocks citing a skill outside `allowed` are dropped.
pub fn parse_subqa(response: &str, allowed: &[usize], max_steps: usize) -> Vec<SubQA> {
    let lines: Vec<&str> = response
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let mut steps = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(skill) = block_header(lines[i]) else {
            i += 1;
            continue;
        };
        let q = lines.get(i + 1).and_then(|l| field(l, "SUBQ:"));
        let a = lines.get(i + 2).and_then(|l| field(l, "SUBA:"));
        match (q, a) {
            (Some(q), Some(a)) => {
                if skill.is_some_and(|s| allowed.contains(&s)) && steps.len() < max_steps {
                    steps.push(SubQA {
                        step_index: steps.len(),
                        skill_id: skill.unwrap_or_default(),
                        sub_question: q.to_string(),
                        sub_answer: a.to_string(),
                    });
                }
                i += 3;
            }
            _ => i += 1,
        }
    }
    steps
}

/// `N. SKILL: <idx>`. Outer None: not a header. Inner None: bad index.
fn block_header(line: &str) -> Option<Option<usize>> {
    let (num, rest) = line.split_once('.')?;
    if num.is_empty() || !num.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let value = field(rest.trim(), "SKILL:")?;
    Some(value.parse().ok())
}

fn field<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let head = line.get(..tag.len())?;
    if !head.eq_ignore_ascii_case(tag) {
        return None;
    }
    let value = line[tag.len()..].trim();
    (!value.is_empty()).then_some(value)
}

const SUBQA_REMINDER: &str = "\n\nYour previous reply did not follow the required format. Reply only with numbered \
blocks, each exactly three lines:\n1. SKILL: <skill index from the list>\nSUBQ: <sub-question>\nSUBA: <sub-answer>";

fn choices_text(example: &VideoQAExample) -> String {
    match &example.choices {
        Some(c) => c
            .iter()
            .enumerate()
            .map(|(i, c)| format!("({}) {c}", (b'A' + (i % 26) as u8) as char))
            .collect::<Vec<_>>()
            .join(" "),
        None => "(open-ended)".into(),
    }
}

/// Returns `None` after two unusable replies.
pub fn generate_subqa(
    example: &VideoQAExample,
    selection: &SkillSelection,
    taxonomy: &SkillTaxonomy,
    client: &LlmClient,
    config: &AnnotationConfig,
) -> Result<Option<Vec<SubQA>>> {
    let model = &config.models.generate;
    let mut base = LlmRequest::new(SKILL_SELECT_SUBQA, model)
        .var("question", &example.question)
        .var("choices", choices_text(example))
        .var(
            "skills",
            taxonomy.skill_lines(selection.skill_ids.iter().copied()),
        )
        .var("max_steps", config.max_steps.to_string());
    if client.accepts_attachments(model) {
        base = base.attach(&example.video_uri);
    }
    let mut request = base.clone();
    for _ in 0..2 {
        let response = client.cached_complete(&request)?;
        let steps = parse_subqa(&response, &selection.skill_ids, config.max_steps);
        if !steps.is_empty() {
            return Ok(Some(steps));
        }
        request = base.clone().with_suffix(SUBQA_REMINDER);
    }
    Ok(None)
}

/// Lowercase alphanumeric words joined by single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when every sub-answer's normalized text occurs in the paragraph, in order.
pub fn mentions_in_order<'a>(paragraph: &str, answers: impl IntoIterator<Item = &'a str>) -> bool {
    let hay = format!(" {} ", normalize_text(paragraph));
    let mut from = 0;
    for a in answers {
        let needle = format!(" {} ", normalize_text(a));
        match hay[from..].find(&needle) {
            Some(pos) => from += pos + needle.len() - 1,
            None => return false,
        }
    }
    true
}

pub fn deterministic_merge(steps: &[&SubQA], taxonomy: &SkillTaxonomy) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let phrase = taxonomy
                .representative_phrases
                .get(s.skill_id)
                .map(|p| p.trim_end_matches('.'))
                .unwrap_or("unknown skill");
            format!(
                "Step {} ({}): {} \u{2014} {}.",
                i + 1,
                phrase,
                s.sub_question,
                s.sub_answer.trim_end_matches('.')
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn steps_block(steps: &[&SubQA], taxonomy: &SkillTaxonomy) -> String {
    steps
        .iter()
        .map(|s| {
            format!(
                "STEP {} [skill {}: {}]\nSUBQ: {}\nSUBA: {}",
                s.step_index,
                s.skill_id,
                taxonomy
                    .representative_phrases
                    .get(s.skill_id)
                    .map(String::as_str)
                    .unwrap_or(""),
                s.sub_question,
                s.sub_answer
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Merged paragraph and whether llm mode fell back to the template join.
pub fn merge_cot(
    question: &str,
    steps: &[&SubQA],
    taxonomy: &SkillTaxonomy,
    mode: MergeMode,
    client: Option<&LlmClient>,
    model_id: &str,
) -> Result<(String, bool)> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument(
            "merge_cot needs at least one step".into(),
        ));
    }
    let fallback = || deterministic_merge(steps, taxonomy);
    let (MergeMode::Llm, Some(client)) = (mode, client) else {
        return Ok((fallback(), mode == MergeMode::Llm));
    };
    let request = LlmRequest::new(MERGE_COT, model_id)
        .var("question", question)
        .var("steps", steps_block(steps, taxonomy));
    match client.cached_complete(&request) {
        Ok(text) if mentions_in_order(&text, steps.iter().map(|s| s.sub_answer.as_str())) => {
            Ok((text.trim().to_string(), false))
        }
        _ => Ok((fallback(), true)),
    }
}

/// Parses `STEP i: KEEP|DROP` lines plus an optional `RATIONALE:` line.
/// Every step must receive exactly one verdict.
pub fn parse_verdict(response: &str, n_steps: usize) -> Option<Verdict> {
    let mut verdicts: Vec<Option<StepVerdict>> = vec![None; n_steps];
    let mut rationale = String::new();
    for line in response.lines().map(str::trim) {
        if let Some(r) = field(line, "RATIONALE:") {
            rationale = r.to_string();
            continue;
        }
        let Some(rest) = line
            .get(..4)
            .filter(|h| h.eq_ignore_ascii_case("STEP"))
            .map(|_| &line[4..])
        else {
            continue;
        };
        let (idx, decision) = rest.split_once(':')?;
        let idx: usize = idx.trim().parse().ok()?;
        let decision = match decision.trim().to_ascii_uppercase().as_str() {
            "KEEP" => StepVerdict::Keep,
            "DROP" => StepVerdict::Drop,
            _ => return None,
        };
        let slot = verdicts.get_mut(idx)?;
        if slot.replace(decision).is_some() {
            return None;
        }
    }
    let step_verdicts = verdicts.into_iter().collect::<Option<Vec<_>>>()?;
    Some(Verdict {
        step_verdicts,
        rationale,
        parser_ok: true,
    })
}

const FILTER_REMINDER: &str =
    "\n\nYour previous reply could not be parsed. Give exactly one line per step, \
STEP <index>: KEEP or STEP <index>: DROP, then one RATIONALE: line.";

/// Filters a raw trace against the ground-truth answer and regenerates its
/// paragraph from the kept steps.
pub fn verify_cot(
    example: &VideoQAExample,
    trace: &CoTTrace,
    taxonomy: &SkillTaxonomy,
    client: &LlmClient,
    config: &AnnotationConfig,
) -> Result<(CoTTrace, Verdict)> {
    if trace.status != TraceStatus::Raw {
        return Err(Error::InvalidArgument(format!(
            "verify_cot expects a raw trace, got {:?}",
            trace.status
        )));
    }
    let all: Vec<&SubQA> = trace.steps.iter().collect();
    let base = LlmRequest::new(FILTER_COT, &config.models.filter)
        .var("question", &example.question)
        .var("answer", &example.answer)
        .var("steps", steps_block(&all, taxonomy));
    let mut request = base.clone();
    let mut verdict = None;
    for _ in 0..2 {
        let response = client.cached_complete(&request)?;
        verdict = parse_verdict(&response, trace.steps.len());
        if verdict.is_some() {
            break;
        }
        request = base.clone().with_suffix(FILTER_REMINDER);
    }
    let mut out = trace.clone();
    let Some(verdict) = verdict else {
        out.status = TraceStatus::Unverified;
        out.flags.push("filter_parse_failed".into());
        let verdict = Verdict {
            step_verdicts: vec![StepVerdict::Keep; trace.steps.len()],
            rationale: String::new(),
            parser_ok: false,
        };
        return Ok((out, verdict));
    };
    out.kept_step_indices = verdict
        .step_verdicts
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == StepVerdict::Keep)
        .map(|(i, _)| i)
        .collect();
    if out.kept_step_indices.is_empty() {
        out.status = TraceStatus::FilteredOut;
        out.merged_paragraph.clear();
    } else {
        out.status = TraceStatus::Verified;
        if out.kept_step_indices.len() != trace.steps.len() {
            let kept = out.kept_steps();
            let (paragraph, fell_back) = merge_cot(
                &example.question,
                &kept,
                taxonomy,
                config.merge,
                Some(client),
                &config.models.merge,
            )?;
            out.merged_paragraph = paragraph;
            if fell_back {
                out.flags.push("merge_fallback".into());
            }
        }
    }
    Ok((out, verdict))
}

fn verification_of(status: TraceStatus) -> Verification {
    match status {
        TraceStatus::Verified => Verification::Verified,
        TraceStatus::FilteredOut => Verification::FilteredOut,
        TraceStatus::Raw | TraceStatus::Unverified => Verification::Unverified,
    }
}

/// Skill selection, sub-QA generation, merge and verification for one example.
pub fn annotate_example(
    example: &VideoQAExample,
    taxonomy: &SkillTaxonomy,
    encoder: &dyn Encoder,
    config: &AnnotationConfig,
    client: &LlmClient,
) -> Result<AnnotatedExample> {
    let ctx = SelectionContext {
        taxonomy,
        encoder,
        client: Some(client),
        model_id: &config.models.select,
    };
    let selection = select_skills(
        &example.id,
        &example.question,
        config.top_k,
        config.selection,
        &ctx,
    )?;
    let mut trace = match generate_subqa(example, &selection, taxonomy, client, config)? {
        None => CoTTrace::failed("subqa_parse_failed"),
        Some(steps) => {
            let refs: Vec<&SubQA> = steps.iter().collect();
            let (merged_paragraph, fell_back) = merge_cot(
                &example.question,
                &refs,
                taxonomy,
                config.merge,
                Some(client),
                &config.models.merge,
            )?;
            let raw = CoTTrace {
                kept_step_indices: (0..steps.len()).collect(),
                steps,
                merged_paragraph,
                status: TraceStatus::Raw,
                flags: if fell_back {
                    vec!["merge_fallback".into()]
                } else {
                    Vec::new()
                },
            };
            verify_cot(example, &raw, taxonomy, client, config)?.0
        }
    };
    if config.selection == SelectionMethod::Llm && selection.method == SelectionMethod::Embedding {
        trace.flags.push("selection_fallback".into());
    }
    Ok(AnnotatedExample {
        base: example.clone(),
        skill_scores: selection.scores.iter().map(|&s| round6(s)).collect(),
        skill_ids: selection.skill_ids,
        verification: verification_of(trace.status),
        cot: trace,
        expert_id: UNASSIGNED_EXPERT,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub total: usize,
    pub verified: usize,
    pub filtered_out: usize,
    pub unverified: usize,
    pub merge_fallbacks: usize,
    pub selection_fallbacks: usize,
}

impl AnnotationReport {
    pub fn tally(annotated: &[AnnotatedExample]) -> Self {
        let mut r = Self {
            total: annotated.len(),
            ..Self::default()
        };
        for a in annotated {
            match a.verification {
                Verification::Verified => r.verified += 1,
                Verification::FilteredOut => r.filtered_out += 1,
                Verification::Unverified => r.unverified += 1,
            }
            let has = |f: &str| a.cot.flags.iter().any(|x| x == f);
            r.merge_fallbacks += has("merge_fallback") as usize;
            r.selection_fallbacks += has("selection_fallback") as usize;
        }
        r
    }
}

/// Annotates examples in parallel; output order follows input order.
pub fn annotate_corpus(
    examples: &[VideoQAExample],
    taxonomy: &SkillTaxonomy,
    encoder: &dyn Encoder,
    config: &AnnotationConfig,
    client: &LlmClient,
) -> Result<(Vec<AnnotatedExample>, AnnotationReport)> {
    let annotated = examples
        .par_iter()
        .enumerate()
        .map(|(index, e)| {
            annotate_example(e, taxonomy, encoder, config, client).map_err(|source| {
                Error::Indexed {
                    index,
                    source: Box::new(source),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AnnotationReport::tally(&annotated);
    Ok((annotated, report))
}
