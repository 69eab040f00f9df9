use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::sha256_hex;
use crate::error::{Error, Result, TransportError};
use crate::http::{HttpEndpointConfig, JsonPoster};

/// What a transport sees: the fully rendered prompt plus call settings.
#[derive(Debug, Clone, Copy)]
pub struct TransportRequest<'a> {
    pub template_name: &'a str,
    pub prompt: &'a str,
    pub model_id: &'a str,
    pub attachments: &'a [String],
    pub max_output_tokens: u32,
    pub temperature: f64,
}

pub trait Transport: Send + Sync {
    fn complete(&self, request: &TransportRequest<'_>) -> Result<String, TransportError>;

    /// Whether `model_id` may receive video attachments.
    fn accepts_attachments(&self, model_id: &str) -> bool;
}

/// One line of a mock script. Exactly one of `prompt_digest` and `pattern`
/// is set. A `template_name` of `*` matches every template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub template_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response_text: String,
}

struct PatternRule {
    template_name: String,
    regex: Regex,
    response_text: String,
}

/// Scripted transport: exact `(template_name, sha256(prompt))` lookups
/// first, then regex rules in script order. Pattern responses may use
/// `$1`/`${name}` capture references (`$$` for a literal dollar).
/// Attachments are ignored.
pub struct MockTransport {
    exact: HashMap<(String, String), String>,
    patterns: Vec<PatternRule>,
}

impl MockTransport {
    pub fn from_rules(rules: impl IntoIterator<Item = MockRule>) -> Result<Self> {
        let mut exact = HashMap::new();
        let mut patterns = Vec::new();
        for (i, rule) in rules.into_iter().enumerate() {
            match (rule.prompt_digest, rule.pattern) {
                (Some(digest), None) => {
                    exact
                        .entry((rule.template_name, digest.to_ascii_lowercase()))
                        .or_insert(rule.response_text);
                }
                (None, Some(pattern)) => {
                    let regex = Regex::new(&pattern)
                        .map_err(|e| Error::Config(format!("mock rule {i}: bad pattern: {e}")))?;
                    patterns.push(PatternRule {
                        template_name: rule.template_name,
                        regex,
                        response_text: rule.response_text,
                    });
                }
                _ => {
                    return Err(Error::Config(format!(
                        "mock rule {i}: exactly one of prompt_digest and pattern must be set"
                    )))
                }
            }
        }
        Ok(Self { exact, patterns })
    }

    pub fn from_script(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(line)
                .map_err(|e| Error::format(path, i + 1, format!("bad mock rule: {e}")))?;
            rules.push(rule);
        }
        Self::from_rules(rules)
    }

    pub fn digest(prompt: &str) -> String {
        sha256_hex(prompt.as_bytes())
    }
}

impl Transport for MockTransport {
    fn complete(&self, request: &TransportRequest<'_>) -> Result<String, TransportError> {
        let digest = Self::digest(request.prompt);
        if let Some(text) = self
            .exact
            .get(&(request.template_name.to_string(), digest.clone()))
        {
            return Ok(text.clone());
        }
        for rule in &self.patterns {
            if rule.template_name != "*" && rule.template_name != request.template_name {
                continue;
            }
            if let Some(caps) = rule.regex.captures(request.prompt) {
                let mut out = String::new();
                caps.expand(&rule.response_text, &mut out);
                return Ok(out);
            }
        }
        Err(TransportError::ScriptedMiss {
            template: request.template_name.to_string(),
            digest,
        })
    }

    fn accepts_attachments(&self, _model_id: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteChatConfig {
    pub endpoint: HttpEndpointConfig,
    /// Model ids allowed to receive video attachments.
    pub multimodal_models: BTreeSet<String>,
}

impl Default for RemoteChatConfig {
    fn default() -> Self {
        Self {
            endpoint: HttpEndpointConfig {
                token_env: Some("LLM_API_TOKEN".into()),
                ..HttpEndpointConfig::default()
            },
            multimodal_models: BTreeSet::from(["gemini-2.0-flash".to_string()]),
        }
    }
}

/// Chat-completions style HTTP transport. Sends
/// `{"model", "messages": [{"role": "user", "content"}], "temperature", "max_tokens"}`
/// and reads `choices[0].message.content`.
pub struct RemoteChatTransport {
    poster: JsonPoster,
    multimodal_models: BTreeSet<String>,
}

impl RemoteChatTransport {
    pub fn new(config: RemoteChatConfig) -> Result<Self> {
        if config.endpoint.url.is_empty() {
            return Err(Error::Config("remote LLM transport requires a url".into()));
        }
        Ok(Self {
            poster: JsonPoster::new(config.endpoint),
            multimodal_models: config.multimodal_models,
        })
    }

    pub fn request_body(request: &TransportRequest<'_>) -> Value {
        let content = if request.attachments.is_empty() {
            Value::String(request.prompt.to_string())
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.prompt})];
            parts.extend(
                request
                    .attachments
                    .iter()
                    .map(|uri| json!({"type": "video_url", "video_url": {"url": uri}})),
            );
            Value::Array(parts)
        };
        json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl Transport for RemoteChatTransport {
    fn complete(&self, request: &TransportRequest<'_>) -> Result<String, TransportError> {
        let response = self.poster.post(&Self::request_body(request))?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                TransportError::Fatal("response lacks choices[0].message.content".into())
            })
    }

    fn accepts_attachments(&self, model_id: &str) -> bool {
        self.multimodal_models.contains(model_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(template: &'a str, prompt: &'a str) -> TransportRequest<'a> {
        TransportRequest {
            template_name: template,
            prompt,
            model_id: "m",
            attachments: &[],
            max_output_tokens: 64,
            temperature: 0.0,
        }
    }

    #[test]
    fn exact_digest_lookup() {
        let prompt = "Describe the skill for: how far is the chair?";
        let mock = MockTransport::from_rules([MockRule {
            template_name: "skill_describe".into(),
            prompt_digest: Some(MockTransport::digest(prompt)),
            pattern: None,
            response_text: "Estimate distance between two objects using visual cues".into(),
        }])
        .unwrap();
        assert_eq!(
            mock.complete(&req("skill_describe", prompt)).unwrap(),
            "Estimate distance between two objects using visual cues"
        );
        match mock.complete(&req("skill_describe", "other")).unwrap_err() {
            TransportError::ScriptedMiss { template, digest } => {
                assert_eq!(template, "skill_describe");
                assert_eq!(digest, MockTransport::digest("other"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn pattern_rules_expand_captures_in_order() {
        let mock = MockTransport::from_rules([
            MockRule {
                template_name: "*".into(),
                prompt_digest: None,
                pattern: Some(r"SKILL (\d+):".into()),
                response_text: "picked $1".into(),
            },
            MockRule {
                template_name: "*".into(),
                prompt_digest: None,
                pattern: Some(".*".into()),
                response_text: "fallback".into(),
            },
        ])
        .unwrap();
        assert_eq!(
            mock.complete(&req("x", "SKILL 4: find it")).unwrap(),
            "picked 4"
        );
        assert_eq!(mock.complete(&req("x", "nothing")).unwrap(), "fallback");
    }

    #[test]
    fn rule_needs_exactly_one_key() {
        let bad = MockRule {
            template_name: "t".into(),
            prompt_digest: None,
            pattern: None,
            response_text: String::new(),
        };
        assert!(MockTransport::from_rules([bad]).is_err());
    }

    #[test]
    fn attachments_become_content_parts() {
        let attachments = vec!["s3://bucket/v.mp4".to_string()];
        let r = TransportRequest {
            attachments: &attachments,
            ..req("t", "hello")
        };
        let body = RemoteChatTransport::request_body(&r);
        assert_eq!(
            body["messages"][0]["content"][1]["video_url"]["url"],
            "s3://bucket/v.mp4"
        );
        assert_eq!(body["temperature"], 0.0);
    }
}
