use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A prompt body with `{placeholder}` slots. `{{` and `}}` render as
/// literal braces; any other brace is an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn tokenize<'a>(name: &str, body: &'a str) -> Result<Vec<Piece<'a>>> {
    let err = |message: String| Error::Template {
        template: name.to_string(),
        message,
    };
    let bytes = body.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                pieces.push(Piece::Text(&body[start..i]));
                pieces.push(Piece::Brace(bytes[i] as char));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = body[i + 1..]
                    .find('}')
                    .map(|off| i + 1 + off)
                    .ok_or_else(|| err(format!("unclosed brace at byte {i}")))?;
                let slot = &body[i + 1..close];
                if !is_ident(slot) {
                    return Err(err(format!("invalid placeholder {{{slot}}} at byte {i}")));
                }
                pieces.push(Piece::Text(&body[start..i]));
                pieces.push(Piece::Slot(slot));
                i = close + 1;
                start = i;
            }
            b'}' => return Err(err(format!("unmatched closing brace at byte {i}"))),
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&body[start..]));
    Ok(pieces)
}

impl PromptTemplate {
    /// Builds a template whose required set is exactly the placeholders in `body`.
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let body = body.into();
        let required_placeholders = placeholders_of(&name, &body)?;
        Ok(Self {
            name,
            body,
            required_placeholders,
        })
    }

    pub fn with_required<I, S>(
        name: impl Into<String>,
        body: impl Into<String>,
        required: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let body = body.into();
        placeholders_of(&name, &body)?;
        Ok(Self {
            name,
            body,
            required_placeholders: required.into_iter().map(Into::into).collect(),
        })
    }

    pub fn placeholders(&self) -> Result<BTreeSet<String>> {
        placeholders_of(&self.name, &self.body)
    }

    /// Pure substitution. Extra variables are ignored.
    pub fn render(&self, variables: &BTreeMap<String, String>) -> Result<String> {
        for p in &self.required_placeholders {
            if !variables.contains_key(p) {
                return Err(Error::MissingPlaceholder {
                    template: self.name.clone(),
                    placeholder: p.clone(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in tokenize(&self.name, &self.body)? {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(s) => match variables.get(s) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::MissingPlaceholder {
                            template: self.name.clone(),
                            placeholder: s.to_string(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

fn placeholders_of(name: &str, body: &str) -> Result<BTreeSet<String>> {
    Ok(tokenize(name, body)?
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(s) => Some(s.to_string()),
            _ => None,
        })
        .collect())
}

pub const SKILL_DESCRIBE: &str = "skill_describe";
pub const SKILL_SELECT: &str = "skill_select";
pub const SKILL_SELECT_SUBQA: &str = "skill_select_subqa";
pub const MERGE_COT: &str = "merge_cot";
pub const FILTER_COT: &str = "filter_cot";

/// Templates the pipeline renders, with the variables it supplies to each.
pub const PIPELINE_TEMPLATES: &[(&str, &[&str], &str)] = &[
    (
        SKILL_DESCRIBE,
        &["question", "answer", "choices"],
        include_str!("../../templates/skill_describe.txt"),
    ),
    (
        SKILL_SELECT,
        &["question", "skills", "k"],
        include_str!("../../templates/skill_select.txt"),
    ),
    (
        SKILL_SELECT_SUBQA,
        &["question", "choices", "skills", "max_steps"],
        include_str!("../../templates/skill_select_subqa.txt"),
    ),
    (
        MERGE_COT,
        &["question", "steps"],
        include_str!("../../templates/merge_cot.txt"),
    ),
    (
        FILTER_COT,
        &["question", "answer", "steps"],
        include_str!("../../templates/filter_cot.txt"),
    ),
];

#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    /// The shipped default templates.
    pub fn builtin() -> Self {
        let mut reg = Self::default();
        for (name, required, body) in PIPELINE_TEMPLATES {
            let t = PromptTemplate::with_required(*name, *body, required.iter().copied())
                .expect("builtin template parses");
            reg.insert(t);
        }
        reg
    }

    /// Builtins overridden by any `<name>.txt` found in `dir`, then audited.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut reg = Self::builtin();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let required = reg.get(&name).map(|t| t.required_placeholders.clone());
            let t = match required {
                Some(req) => PromptTemplate::with_required(name, body, req)?,
                None => PromptTemplate::new(name, body)?,
            };
            reg.insert(t);
        }
        reg.audit()?;
        Ok(reg)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Option<&PromptTemplate> {
        self.templates.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&PromptTemplate> {
        self.get(name).ok_or_else(|| Error::Template {
            template: name.to_string(),
            message: "not registered".into(),
        })
    }

    /// Every template's required placeholders must be exactly those in its body.
    pub fn audit(&self) -> Result<()> {
        for t in self.templates.values() {
            let found = t.placeholders()?;
            if found != t.required_placeholders {
                let missing: Vec<_> = t.required_placeholders.difference(&found).collect();
                let extra: Vec<_> = found.difference(&t.required_placeholders).collect();
                return Err(Error::Template {
                    template: t.name.clone(),
                    message: format!(
                        "placeholder audit failed: missing {missing:?}, unexpected {extra:?}"
                    ),
                });
            }
        }
        Ok(())
    }
}
