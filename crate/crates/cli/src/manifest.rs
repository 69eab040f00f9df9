//! One manifest per subcommand run: what went in, what came out, and the
//! digests needed to check a rerun.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use skillcot_core::canonical::{sha256_hex, to_canonical_json};
use skillcot_core::clock::now_rfc3339;
use skillcot_core::corpus::write_file;
use skillcot_core::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: String,
}

pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

fn file_key(map: &BTreeMap<String, String>, path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut key = name.clone();
    let mut n = 2;
    while map.contains_key(&key) {
        key = format!("{name}#{n}");
        n += 1;
    }
    key
}

impl Run {
    pub fn start(subcommand: &str, out_dir: &Path, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_digest: sha256_hex(to_canonical_json(config)?),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                seeds: Vec::new(),
                started_at: now_rfc3339(),
                finished_at: String::new(),
            },
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seeds.push(seed);
    }

    /// Digests an input file and returns its contents.
    pub fn input(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let key = file_key(&self.manifest.inputs, path);
        self.manifest
            .inputs
            .insert(key, sha256_hex(text.as_bytes()));
        Ok(text)
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.output_path(name);
        write_file(&path, contents)?;
        self.record(&path)?;
        Ok(path)
    }

    /// Records a file some other routine already wrote.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let key = file_key(&self.manifest.outputs, path);
        self.manifest.outputs.insert(key, sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finished_at = now_rfc3339();
        let path = self
            .out_dir
            .join(format!("{}.manifest.json", self.manifest.subcommand));
        write_file(&path, &(to_canonical_json(&self.manifest)? + "\n"))?;
        Ok(path)
    }
}
