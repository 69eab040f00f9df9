//! Line-oriented text files made of `[name]` sections. Used by the centroid,
//! taxonomy, partition and toy-model file formats.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Section<'a> {
    pub name: &'a str,
    /// (1-based line number, content)
    pub lines: Vec<(usize, &'a str)>,
}

pub fn parse_sections<'a>(text: &'a str, path: &Path) -> Result<Vec<Section<'a>>> {
    let mut sections: Vec<Section<'a>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push(Section {
                name,
                lines: Vec::new(),
            });
        } else {
            match sections.last_mut() {
                Some(s) => s.lines.push((i + 1, trimmed)),
                None => return Err(Error::format(path, i + 1, "content before first [section]")),
            }
        }
    }
    Ok(sections)
}

pub fn find<'s, 'a>(
    sections: &'s [Section<'a>],
    name: &str,
    path: &Path,
) -> Result<&'s Section<'a>> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::format(path, 0, format!("missing [{name}] section")))
}

pub fn parse_floats(s: &str, path: &Path, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path, line, format!("not a number: {t:?}")))
        })
        .collect()
}
