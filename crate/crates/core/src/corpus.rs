//! Video-QA records: loading with validation, seeded train/test splitting,
//! and canonical annotation files with content-hash manifests.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotation::{CoTTrace, TraceStatus};
use crate::canonical::{sha256_hex, to_canonical_json};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unsplit,
}

/// One (video, question, answer) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoQAExample {
    pub id: String,
    pub video_uri: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
    #[serde(default)]
    pub split: Split,
}

impl VideoQAExample {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("id is empty");
        }
        if self.question.trim().is_empty() {
            return fail("question is empty");
        }
        if self.answer.trim().is_empty() {
            return fail("answer is empty");
        }
        if let Some(choices) = &self.choices {
            if !choices.iter().any(|c| c == &self.answer) {
                return Err(Error::InvalidRecord {
                    id: self.id.clone(),
                    message: format!(
                        "answer {:?} is not one of the choices {:?}",
                        self.answer, choices
                    ),
                });
            }
        }
        Ok(())
    }

    /// Index of the answer within `choices`, when choices are present.
    pub fn answer_index(&self) -> Option<usize> {
        self.choices
            .as_ref()
            .and_then(|c| c.iter().position(|x| x == &self.answer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Verified,
    FilteredOut,
    Unverified,
}

/// Expert id carried by annotations before partitioning has run.
pub const UNASSIGNED_EXPERT: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedExample {
    pub base: VideoQAExample,
    pub skill_ids: Vec<usize>,
    pub skill_scores: Vec<f64>,
    pub cot: CoTTrace,
    pub expert_id: i64,
    pub verification: Verification,
}

impl AnnotatedExample {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let fail = |message: String| {
            Err(Error::InvalidRecord {
                id: self.base.id.clone(),
                message,
            })
        };
        if self.skill_ids.len() != self.skill_scores.len() {
            return fail("skill_ids and skill_scores differ in length".into());
        }
        let distinct: BTreeSet<_> = self.skill_ids.iter().collect();
        if distinct.len() != self.skill_ids.len() {
            return fail(format!("skill_ids are not distinct: {:?}", self.skill_ids));
        }
        if self.skill_scores.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return fail("skill score outside [-1, 1]".into());
        }
        if self.skill_scores.windows(2).any(|w| w[1] > w[0]) {
            return fail("skill_scores are not non-increasing".into());
        }
        if let Err(message) = self.cot.check() {
            return fail(message);
        }
        let consistent = matches!(
            (self.verification, self.cot.status),
            (Verification::Verified, TraceStatus::Verified)
                | (Verification::FilteredOut, TraceStatus::FilteredOut)
                | (
                    Verification::Unverified,
                    TraceStatus::Unverified | TraceStatus::Raw
                )
        );
        if !consistent {
            return fail(format!(
                "verification {:?} disagrees with trace status {:?}",
                self.verification, self.cot.status
            ));
        }
        Ok(())
    }
}

/// Summary written next to every annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_path: String,
    pub example_count: usize,
    pub split_seed: Option<u64>,
    pub split_ratio: Option<SplitRatio>,
    pub content_hash: String,
}

/// A train:test ratio such as `7:3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub test: u32,
}

impl SplitRatio {
    pub const SEVEN_THREE: SplitRatio = SplitRatio { train: 7, test: 3 };

    /// floor(n * train / (train + test)), computed exactly.
    pub fn train_count(&self, n: usize) -> usize {
        let total = u128::from(self.train) + u128::from(self.test);
        ((n as u128 * u128::from(self.train)) / total) as usize
    }

    fn check(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::InvalidArgument(format!(
                "split ratio {self} must give a train fraction strictly between 0 and 1"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.train, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("ratio {s:?} is not of the form a:b")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidArgument(format!("ratio {s:?} is not of the form a:b")))
        };
        let ratio = SplitRatio {
            train: parse(a)?,
            test: parse(b)?,
        };
        ratio.check()?;
        Ok(ratio)
    }
}

impl Serialize for SplitRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SplitRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn check_unique<'a>(ids: impl Iterator<Item = (usize, &'a str)>) -> Result<()> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (line, id) in ids {
        if let Some(&first_line) = seen.get(id) {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                first_line,
                second_line: line,
            });
        }
        seen.insert(id, line);
    }
    Ok(())
}

/// Loads a line-delimited dataset, validating every record.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<VideoQAExample>> {
    parse_dataset(&read_text(path.as_ref())?)
}

pub fn parse_dataset(text: &str) -> Result<Vec<VideoQAExample>> {
    let records: Vec<(usize, VideoQAExample)> = parse_lines(text)?;
    check_unique(records.iter().map(|(l, r)| (*l, r.id.as_str())))?;
    for (_, r) in &records {
        r.validate()?;
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Seeded Fisher–Yates split. The first `floor(n * ratio)` positions of the
/// permutation form the train side; both sides keep input order.
pub fn split_dataset(
    examples: &[VideoQAExample],
    ratio: SplitRatio,
    seed: u64,
) -> Result<(Vec<VideoQAExample>, Vec<VideoQAExample>)> {
    ratio.check()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..ratio.train_count(n)] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (example, train_side) in examples.iter().zip(is_train) {
        let mut example = example.clone();
        if train_side {
            example.split = Split::Train;
            train.push(example);
        } else {
            example.split = Split::Test;
            test.push(example);
        }
    }
    Ok((train, test))
}

/// Canonical line-delimited rendering of any record list.
pub fn canonical_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_canonical_json(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(examples: &[VideoQAExample], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &canonical_lines(examples)?)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes annotations canonically and a manifest beside them
/// (`<path>.manifest.json`).
pub fn write_annotations(
    examples: &[AnnotatedExample],
    path: impl AsRef<Path>,
    split: Option<(SplitRatio, u64)>,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    for e in examples {
        e.validate()?;
    }
    let body = canonical_lines(examples)?;
    write_file(path, &body)?;
    let manifest = DatasetManifest {
        source_path: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        example_count: examples.len(),
        split_seed: split.map(|(_, s)| s),
        split_ratio: split.map(|(r, _)| r),
        content_hash: sha256_hex(body.as_bytes()),
    };
    write_file(
        &manifest_path(path),
        &(to_canonical_json(&manifest)? + "\n"),
    )?;
    Ok(manifest)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedExample>> {
    parse_annotations(&read_text(path.as_ref())?)
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotatedExample>> {
    let records: Vec<(usize, AnnotatedExample)> = parse_lines(text)?;
    check_unique(records.iter().map(|(l, r)| (*l, r.base.id.as_str())))?;
    for (_, r) in &records {
        r.validate()?;
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Examples eligible for training: verified traces only. Refuses records
/// that have not been assigned an expert.
pub fn training_export(examples: &[AnnotatedExample]) -> Result<Vec<AnnotatedExample>> {
    let kept: Vec<AnnotatedExample> = examples
        .iter()
        .filter(|e| e.verification == Verification::Verified)
        .cloned()
        .collect();
    if let Some(e) = kept.iter().find(|e| e.expert_id < 0) {
        return Err(Error::InvalidRecord {
            id: e.base.id.clone(),
            message: "expert_id not assigned; run expert partitioning before export".into(),
        });
    }
    Ok(kept)
}
