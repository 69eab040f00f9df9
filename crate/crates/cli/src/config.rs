//! Pipeline configuration: one TOML file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillcot_core::annotation::AnnotationConfig;
use skillcot_core::embedding::{EncoderKind, EncoderSpec, HashEncoder, RemoteEncoder};
use skillcot_core::experts::{ExperimentConfig, SyntheticConfig, ToyModelConfig};
use skillcot_core::http::HttpEndpointConfig;
use skillcot_core::llmclient::RemoteChatConfig;
use skillcot_core::{Encoder, Error, Result, SplitRatio};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyRun {
    /// Partitioned annotation file to train on; synthetic data when absent.
    pub annotations: Option<PathBuf>,
    pub model: ToyModelConfig,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub split_ratio: SplitRatio,
    pub encoder: EncoderSpec,
    pub embedding_endpoint: HttpEndpointConfig,
    pub n_skills: usize,
    pub n_experts: usize,
    pub kmeans_restarts: usize,
    pub annotation: AnnotationConfig,
    pub llm: RemoteChatConfig,
    pub templates_dir: Option<PathBuf>,
    pub max_inflight: usize,
    pub toy: ToyRun,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_ratio: SplitRatio::SEVEN_THREE,
            encoder: EncoderSpec::default(),
            embedding_endpoint: HttpEndpointConfig::default(),
            n_skills: 10,
            n_experts: 5,
            kmeans_restarts: 1,
            annotation: AnnotationConfig::default(),
            llm: RemoteChatConfig::default(),
            templates_dir: None,
            max_inflight: 8,
            toy: ToyRun::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.templates_dir);
        rebase(&mut cfg.toy.annotations);
        Ok(cfg)
    }

    pub fn encoder(&self, spec: &EncoderSpec) -> Result<Box<dyn Encoder>> {
        Ok(match spec.kind {
            EncoderKind::TestHash => Box::new(HashEncoder::new(spec.dims)?),
            EncoderKind::Remote => Box::new(RemoteEncoder::new(
                spec.clone(),
                self.embedding_endpoint.clone(),
                self.max_inflight,
            )?),
        })
    }
}
