//! Chat-completion backends, prompt templating, latency and cost accounting.
//!
//! Every model, hosted or local, is reached through the OpenAI-compatible
//! `POST {endpoint}/chat/completions` shape. Models that expect the
//! `<s>[INST] ... [/INST]` instruction template receive the rendered string as
//! a single user message.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::qa::{ChatTurn, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    PlainChat,
    InstBlock,
}

/// USD prices per 1000 tokens. Both zero for locally served models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_1k: Decimal,
    pub completion_per_1k: Decimal,
}

impl Pricing {
    pub fn new(prompt_per_1k: Decimal, completion_per_1k: Decimal) -> Self {
        Self {
            prompt_per_1k,
            completion_per_1k,
        }
    }

    pub fn is_free(&self) -> bool {
        self.prompt_per_1k.is_zero() && self.completion_per_1k.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_template")]
    pub template_kind: TemplateKind,
    #[serde(default)]
    pub pricing: Pricing,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_MAX_TOKENS: u32 = 2000;

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_template() -> TemplateKind {
    TemplateKind::PlainChat
}

fn default_timeout_s() -> u64 {
    300
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint_url: endpoint_url.into(),
            api_key_env: None,
            model_id: None,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            template_kind: TemplateKind::PlainChat,
            pricing: Pricing::default(),
            timeout_s: default_timeout_s(),
        }
    }

    pub fn wire_model(&self) -> &str {
        self.model_id.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("model name is empty".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("{}: temperature must be >= 0", self.name));
        }
        if self.max_tokens == 0 {
            return Err(format!("{}: max_tokens must be >= 1", self.name));
        }
        if self.pricing.prompt_per_1k.is_sign_negative() || self.pricing.completion_per_1k.is_sign_negative() {
            return Err(format!("{}: prices must be >= 0", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read model registry {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("invalid model registry: {0}")]
    Invalid(String),
}

/// The set of models available for QA and benchmarking.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub models: Vec<ModelConfig>,
}

impl ModelRegistry {
    pub fn new(models: Vec<ModelConfig>) -> Result<Self, RegistryError> {
        let mut names = HashSet::new();
        for m in &models {
            m.validate().map_err(RegistryError::Invalid)?;
            if !names.insert(m.name.as_str()) {
                return Err(RegistryError::Invalid(format!("duplicate model {}", m.name)));
            }
        }
        Ok(Self { models })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let raw: ModelRegistry =
            serde_json::from_str(text).map_err(|e| RegistryError::Invalid(e.to_string()))?;
        Self::new(raw.models)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RegistryError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn get(&self, name: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A rendered prompt: role-tagged messages, or one raw instruction string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    Messages(Vec<ChatMessage>),
    Raw(String),
}

impl Prompt {
    /// Messages as sent over the chat-completions API.
    pub fn wire_messages(&self) -> Vec<ChatMessage> {
        match self {
            Prompt::Messages(m) => m.clone(),
            Prompt::Raw(text) => vec![ChatMessage::new(Role::User, text.clone())],
        }
    }

    pub fn char_count(&self) -> usize {
        match self {
            Prompt::Messages(m) => m.iter().map(|m| m.content.chars().count()).sum(),
            Prompt::Raw(text) => text.chars().count(),
        }
    }

    /// The system instruction, if the prompt carries one separately.
    pub fn system(&self) -> Option<&str> {
        match self {
            Prompt::Messages(m) => m
                .iter()
                .find(|m| m.role == Role::System)
                .map(|m| m.content.as_str()),
            Prompt::Raw(_) => None,
        }
    }

    /// Full prompt text (messages joined by blank lines).
    pub fn text(&self) -> String {
        match self {
            Prompt::Messages(m) => m
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n\n"),
            Prompt::Raw(text) => text.clone(),
        }
    }
}

/// Joins retrieved context and the question into one user message.
pub fn user_content(context: &str, question: &str) -> String {
    if context.is_empty() {
        question.to_string()
    } else {
        format!("{context}\n\n{question}")
    }
}

pub fn render_prompt(
    kind: TemplateKind,
    system: &str,
    context: &str,
    question: &str,
    history: &[ChatTurn],
) -> Prompt {
    render_turns(kind, system, &user_content(context, question), history)
}

/// Renders a conversation whose final user message is `content`.
///
/// `plain_chat` gives `[system, history..., user]`. `inst_block` gives
/// `<s>[INST] system\n\nfirst user [/INST] answer </s>[INST] next [/INST]`,
/// with the system text folded into the first instruction block.
pub fn render_turns(kind: TemplateKind, system: &str, content: &str, history: &[ChatTurn]) -> Prompt {
    match kind {
        TemplateKind::PlainChat => {
            let mut messages = Vec::with_capacity(history.len() + 2);
            messages.push(ChatMessage::new(Role::System, system));
            messages.extend(history.iter().map(|t| ChatMessage::new(t.role, t.text.clone())));
            messages.push(ChatMessage::new(Role::User, content));
            Prompt::Messages(messages)
        }
        TemplateKind::InstBlock => {
            let mut out = String::from("<s>");
            let mut first = true;
            for (role, text) in history
                .iter()
                .map(|t| (t.role, t.text.as_str()))
                .chain(std::iter::once((Role::User, content)))
            {
                match role {
                    Role::User => {
                        out.push_str("[INST] ");
                        if first && !system.is_empty() {
                            out.push_str(system);
                            out.push_str("\n\n");
                        }
                        first = false;
                        out.push_str(text);
                        out.push_str(" [/INST]");
                    }
                    Role::Assistant => {
                        out.push(' ');
                        out.push_str(text);
                        out.push_str(" </s>");
                    }
                    Role::System => {}
                }
            }
            Prompt::Raw(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend returned for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Token counts were estimated from character counts.
    pub tokens_estimated: bool,
    pub latency_s: f64,
    pub cost_usd: Decimal,
}

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("{model}: request timed out after {timeout_s} s")]
    Timeout { model: String, timeout_s: u64 },
    #[error("{model}: HTTP {status}: {body}")]
    Http {
        model: String,
        status: u16,
        body: String,
    },
    #[error("{model}: malformed response: {detail}")]
    MalformedResponse { model: String, detail: String },
    #[error("{model}: backend unreachable: {detail}")]
    Unavailable { model: String, detail: String },
    #[error("{model}: environment variable {var} is not set")]
    MissingApiKey { model: String, var: String },
}

impl LlmError {
    pub fn model(&self) -> &str {
        match self {
            LlmError::Timeout { model, .. }
            | LlmError::Http { model, .. }
            | LlmError::MalformedResponse { model, .. }
            | LlmError::Unavailable { model, .. }
            | LlmError::MissingApiKey { model, .. } => model,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, model: &ModelConfig, prompt: &Prompt) -> Result<BackendReply, LlmError>;
}

/// Cost in USD, exact decimal arithmetic, rounded to 6 decimal places.
pub fn estimate_cost(prompt_tokens: u64, completion_tokens: u64, pricing: &Pricing) -> Decimal {
    let thousand = Decimal::from(1000);
    let cost = Decimal::from(prompt_tokens) * pricing.prompt_per_1k / thousand
        + Decimal::from(completion_tokens) * pricing.completion_per_1k / thousand;
    let mut cost = cost.round_dp(6);
    cost.rescale(6);
    cost
}

/// Character-count token estimate, used when a backend reports no usage.
pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Sends `prompt`, timing the whole exchange, and fills in usage and cost.
pub fn complete(
    backend: &dyn ChatBackend,
    cfg: &ModelConfig,
    prompt: &Prompt,
    clock: &dyn Clock,
) -> Result<CompletionResult, LlmError> {
    let start = clock.now();
    let reply = backend.send(cfg, prompt)?;
    let latency_s = clock.seconds_since(start);
    let (usage, tokens_estimated) = match reply.usage {
        Some(u) => (u, false),
        None => (
            Usage {
                prompt_tokens: estimate_tokens(prompt.char_count()),
                completion_tokens: estimate_tokens(reply.text.chars().count()),
            },
            true,
        ),
    };
    Ok(CompletionResult {
        cost_usd: estimate_cost(usage.prompt_tokens, usage.completion_tokens, &cfg.pricing),
        text: reply.text,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        tokens_estimated,
        latency_s,
    })
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// OpenAI-compatible chat-completions client (non-streaming).
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    agent: ureq::Agent,
}

impl Default for HttpChatBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpChatBackend {
    pub fn new() -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    fn map_error(cfg: &ModelConfig, err: ureq::Error) -> LlmError {
        let model = cfg.name.clone();
        match err {
            ureq::Error::Status(status, response) => LlmError::Http {
                model,
                status,
                body: response.into_string().unwrap_or_default(),
            },
            ureq::Error::Transport(t) => {
                if is_timeout(&t) {
                    LlmError::Timeout {
                        model,
                        timeout_s: cfg.timeout_s,
                    }
                } else {
                    LlmError::Unavailable {
                        model,
                        detail: t.to_string(),
                    }
                }
            }
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    use std::error::Error as _;
    let mut source = t.source();
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().contains("timed out")
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, cfg: &ModelConfig, prompt: &Prompt) -> Result<BackendReply, LlmError> {
        let url = format!("{}/chat/completions", cfg.endpoint_url.trim_end_matches('/'));
        let mut request = self
            .agent
            .post(&url)
            .timeout(Duration::from_secs(cfg.timeout_s));
        if let Some(var) = cfg.api_key_env.as_deref().filter(|v| !v.is_empty()) {
            let key = std::env::var(var).map_err(|_| LlmError::MissingApiKey {
                model: cfg.name.clone(),
                var: var.to_string(),
            })?;
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: cfg.wire_model(),
            messages: prompt.wire_messages(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        };
        let response = request
            .send_json(&body)
            .map_err(|e| Self::map_error(cfg, e))?;
        let parsed: ChatResponse = response.into_json().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut {
                LlmError::Timeout {
                    model: cfg.name.clone(),
                    timeout_s: cfg.timeout_s,
                }
            } else {
                LlmError::MalformedResponse {
                    model: cfg.name.clone(),
                    detail: e.to_string(),
                }
            }
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse {
                model: cfg.name.clone(),
                detail: "no message content in choices".into(),
            })?;
        let usage = parsed.usage.and_then(|u| {
            Some(Usage {
                prompt_tokens: u.prompt_tokens?,
                completion_tokens: u.completion_tokens?,
            })
        });
        Ok(BackendReply { text, usage })
    }
}

type Responder = dyn Fn(&ModelConfig, &Prompt) -> Result<BackendReply, LlmError> + Send + Sync;

/// In-process backend driven by a closure, for tests and offline runs.
/// Records every request it receives.
pub struct ScriptedBackend {
    responder: Box<Responder>,
    delay: Option<Duration>,
    calls: AtomicUsize,
    log: Mutex<Vec<(ModelConfig, Prompt)>>,
}

impl ScriptedBackend {
    pub fn new<F>(responder: F) -> Self
    where
        F: Fn(&ModelConfig, &Prompt) -> Result<BackendReply, LlmError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(responder),
            delay: None,
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Always answers `text`.
    pub fn constant(text: &str) -> Self {
        let text = text.to_string();
        Self::new(move |_, _| Ok(BackendReply::text(text.clone())))
    }

    /// Always fails as if the endpoint were down.
    pub fn unavailable() -> Self {
        Self::new(|cfg, _| {
            Err(LlmError::Unavailable {
                model: cfg.name.clone(),
                detail: "connection refused".into(),
            })
        })
    }

    /// Sleeps for `delay` before answering.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<(ModelConfig, Prompt)> {
        self.log.lock().unwrap().clone()
    }
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("delay", &self.delay)
            .field("calls", &self.calls())
            .finish()
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, model: &ModelConfig, prompt: &Prompt) -> Result<BackendReply, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push((model.clone(), prompt.clone()));
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        (self.responder)(model, prompt)
    }
}
