//! Chat-completion gateway: an OpenAI-style remote client and a scripted,
//! deterministic mock.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::ProviderKind;
use crate::http::{
    auth_headers, post_with_retry, truncate, CallError, HttpTransport, InflightLimiter, RetryPolicy, Sleeper,
    ThreadSleeper, UreqTransport,
};

pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("completion request has an empty {0} prompt")]
    EmptyPrompt(&'static str),
    #[error("chat provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("chat provider rejected the request with HTTP {status}: {body}")]
    ProviderRejected { status: u16, body: String },
    #[error("malformed chat response: {0}")]
    MalformedResponse(String),
    #[error("no mock rule matches prompt {0:?}")]
    MockUnmatched(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
    #[error("invalid chat provider config: {0}")]
    InvalidConfig(String),
}

impl From<CallError> for LlmError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Unreachable { .. } => LlmError::ProviderUnreachable(e.to_string()),
            CallError::Rejected { status, body } => LlmError::ProviderRejected { status, body },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// A zero-temperature request, as used for slot extraction and tagging.
    pub fn deterministic(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt("system"));
        }
        if self.user_prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt("user"));
        }
        Ok(())
    }
}

pub trait ChatGateway: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
    fn kind(&self) -> ProviderKind;
}

impl<G: ChatGateway + ?Sized> ChatGateway for Arc<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher: String,
    pub response: String,
}

/// Answers with the response of the first rule whose matcher is a substring
/// of the user prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedMock {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: Option<String>,
}

impl ScriptedMock {
    pub fn new(rules: Vec<MockRule>, default_response: Option<String>) -> Self {
        Self {
            rules,
            default_response,
        }
    }

    pub fn from_pairs<M: Into<String>, R: Into<String>>(pairs: impl IntoIterator<Item = (M, R)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(m, r)| MockRule {
                    matcher: m.into(),
                    response: r.into(),
                })
                .collect(),
            None,
        )
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn push(&mut self, matcher: impl Into<String>, response: impl Into<String>) {
        self.rules.push(MockRule {
            matcher: matcher.into(),
            response: response.into(),
        });
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let mock: Self = serde_json::from_str(text).map_err(|e| LlmError::InvalidScript(e.to_string()))?;
        if let Some(i) = mock.rules.iter().position(|r| r.matcher.is_empty()) {
            return Err(LlmError::InvalidScript(format!("rule {i} has an empty matcher")));
        }
        Ok(mock)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn respond(&self, user_prompt: &str) -> Result<&str, LlmError> {
        self.rules
            .iter()
            .find(|r| user_prompt.contains(r.matcher.as_str()))
            .map(|r| r.response.as_str())
            .or(self.default_response.as_deref())
            .ok_or_else(|| LlmError::MockUnmatched(truncate(user_prompt, 80)))
    }
}

impl ChatGateway for ScriptedMock {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.respond(&request.user_prompt).map(str::to_string)
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }
}

/// Wraps a gateway and counts calls that reached it.
pub struct CountingGateway<G> {
    inner: G,
    calls: AtomicUsize,
}

impl<G: ChatGateway> CountingGateway<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: ChatGateway> ChatGateway for CountingGateway<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint_url: None,
            model_name: "default".into(),
            timeout_ms: 30_000,
            max_in_flight: 4,
            api_key: None,
        }
    }
}

impl LlmProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_ms == 0 {
            return Err(LlmError::InvalidConfig("timeout_ms must be positive".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(LlmError::InvalidConfig(
                "remote provider requires endpoint_url (AUDITNET_LLM_URL)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

/// Chat provider reached over HTTP.
pub struct RemoteChat {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    transport: Arc<dyn HttpTransport>,
    sleeper: Arc<dyn Sleeper>,
    limiter: InflightLimiter,
}

impl RemoteChat {
    pub fn new(config: &LlmProviderConfig) -> Result<Self, LlmError> {
        Self::with_transport(config, Arc::new(UreqTransport), Arc::new(ThreadSleeper))
    }

    pub fn with_transport(
        config: &LlmProviderConfig,
        transport: Arc<dyn HttpTransport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, LlmError> {
        let config = LlmProviderConfig {
            kind: ProviderKind::Remote,
            ..config.clone()
        };
        config.validate()?;
        Ok(Self {
            url: config.endpoint_url.unwrap_or_default(),
            model: config.model_name,
            api_key: config.api_key,
            timeout: Duration::from_millis(config.timeout_ms),
            retry: RetryPolicy::default(),
            transport,
            sleeper,
            limiter: InflightLimiter::new(config.max_in_flight),
        })
    }
}

impl ChatGateway for RemoteChat {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = serde_json::to_string(&WireRequest {
            model: &self.model,
            messages: [
                WireMessage {
                    role: "system",
                    content: &request.system_prompt,
                },
                WireMessage {
                    role: "user",
                    content: &request.user_prompt,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .expect("request serializes");
        let resp = {
            let _permit = self.limiter.acquire();
            post_with_retry(
                self.transport.as_ref(),
                self.sleeper.as_ref(),
                &self.retry,
                &self.url,
                &auth_headers(self.api_key.as_deref()),
                &body,
                self.timeout,
            )?
        };
        let parsed: WireResponse =
            serde_json::from_str(&resp.body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("response has no choices".into()))
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }
}

/// Builds the configured gateway. A mock without a script answers nothing
/// and fails every call with `MockUnmatched`.
pub fn build_gateway(config: &LlmProviderConfig, script: Option<ScriptedMock>) -> Result<Arc<dyn ChatGateway>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(script.unwrap_or_default()),
        ProviderKind::Remote => Arc::new(RemoteChat::new(config)?),
    })
}
