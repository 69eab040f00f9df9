//! Chat-completion client: named prompt templates, a pluggable transport
//! (remote HTTP or scripted mock), an append-only response cache and an
//! in-flight request bound.

mod cache;
mod template;
mod transport;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use template::{
    PromptTemplate, TemplateRegistry, FILTER_COT, MERGE_COT, PIPELINE_TEMPLATES, SKILL_DESCRIBE,
    SKILL_SELECT, SKILL_SELECT_SUBQA,
};
pub use transport::{
    MockRule, MockTransport, RemoteChatConfig, RemoteChatTransport, Transport, TransportRequest,
};

use crate::clock::now_rfc3339;
use crate::error::{Error, Result};
use crate::limiter::InFlightLimiter;

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub template_name: String,
    pub variables: BTreeMap<String, String>,
    pub model_id: String,
    pub attachments: Vec<String>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Appended verbatim after the rendered template (corrective retries).
    pub suffix: Option<String>,
}

impl LlmRequest {
    pub fn new(template_name: &str, model_id: &str) -> Self {
        Self {
            template_name: template_name.to_string(),
            variables: BTreeMap::new(),
            model_id: model_id.to_string(),
            attachments: Vec::new(),
            max_output_tokens: 1024,
            temperature: 0.0,
            suffix: None,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    pub fn attach(mut self, uri: impl Into<String>) -> Self {
        self.attachments.push(uri.into());
        self
    }

    pub fn with_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.suffix = Some(suffix.into());
        self
    }
}

pub struct LlmClient {
    registry: TemplateRegistry,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: InFlightLimiter,
    transport_calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(registry: TemplateRegistry, transport: Arc<dyn Transport>) -> Self {
        Self {
            registry,
            transport,
            cache: None,
            limiter: InFlightLimiter::new(8),
            transport_calls: AtomicUsize::new(0),
        }
    }

    /// Builtin templates over a mock transport, no cache.
    pub fn mock(mock: MockTransport) -> Self {
        Self::new(TemplateRegistry::builtin(), Arc::new(mock))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_inflight(mut self, max: usize) -> Self {
        self.limiter = InFlightLimiter::new(max);
        self
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn max_inflight(&self) -> usize {
        self.limiter.max()
    }

    /// Number of requests that reached the transport (cache hits excluded).
    pub fn transport_calls(&self) -> usize {
        self.transport_calls.load(Ordering::SeqCst)
    }

    pub fn accepts_attachments(&self, model_id: &str) -> bool {
        self.transport.accepts_attachments(model_id)
    }

    pub fn render(&self, request: &LlmRequest) -> Result<String> {
        let template = self.registry.require(&request.template_name)?;
        let mut prompt = template.render(&request.variables)?;
        if let Some(suffix) = &request.suffix {
            prompt.push_str(suffix);
        }
        Ok(prompt)
    }

    fn check(&self, request: &LlmRequest) -> Result<()> {
        if !request.temperature.is_finite() || request.temperature < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature {} is not a finite non-negative number",
                request.temperature
            )));
        }
        if !request.attachments.is_empty() && !self.transport.accepts_attachments(&request.model_id)
        {
            return Err(Error::InvalidArgument(format!(
                "model {} does not accept video attachments",
                request.model_id
            )));
        }
        Ok(())
    }

    /// Renders and sends through the transport, bypassing the cache.
    pub fn complete(&self, request: &LlmRequest) -> Result<String> {
        self.check(request)?;
        let prompt = self.render(request)?;
        self.send(request, &prompt)
    }

    fn send(&self, request: &LlmRequest, prompt: &str) -> Result<String> {
        let _permit = self.limiter.acquire();
        self.transport_calls.fetch_add(1, Ordering::SeqCst);
        let text = self.transport.complete(&TransportRequest {
            template_name: &request.template_name,
            prompt,
            model_id: &request.model_id,
            attachments: &request.attachments,
            max_output_tokens: request.max_output_tokens,
            temperature: request.temperature,
        })?;
        Ok(text)
    }

    /// Cache hit returns the stored text; a miss completes and stores.
    /// Without a configured cache this is [`LlmClient::complete`].
    pub fn cached_complete(&self, request: &LlmRequest) -> Result<String> {
        self.check(request)?;
        let prompt = self.render(request)?;
        let Some(cache) = &self.cache else {
            return self.send(request, &prompt);
        };
        let key = cache_key(
            &request.template_name,
            &prompt,
            &request.model_id,
            &request.attachments,
        );
        if let Some(text) = cache.get(&key) {
            return Ok(text);
        }
        let text = self.send(request, &prompt)?;
        cache.put(CacheEntry {
            key,
            response_text: text.clone(),
            created_at: now_rfc3339(),
        })?;
        Ok(text)
    }
}
