//! Conversational QA chain.
//!
//! A question flows through: history-aware condensation into a standalone
//! search query (only when the session already has turns), embedding and
//! retrieval, context formatting, and answer generation with the QA prompt.

use std::fs;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::clock::{Clock, SystemClock};
use crate::embedding::{EmbedError, Embedder};
use crate::llm::{complete, render_turns, ChatBackend, CompletionResult, LlmError, ModelConfig};
use crate::vector_store::{Index, IndexError, RetrievalHit, RetrieverConfig};

pub const NO_CONTEXT: &str = "No relevant context found.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl ChatTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            timestamp: Utc::now(),
        }
    }
}

/// Conversation state. Turns alternate user/assistant, starting with user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub turns: Vec<ChatTurn>,
    pub model: ModelConfig,
    pub retriever: RetrieverConfig,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>, model: ModelConfig, retriever: RetrieverConfig) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            model,
            retriever,
        }
    }

    fn push_exchange(&mut self, question: &str, answer: &str) {
        self.turns.push(ChatTurn::new(Role::User, question));
        self.turns.push(ChatTurn::new(Role::Assistant, answer));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    Binary,
    #[default]
    LongForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub sources: Vec<RetrievalHit>,
    pub condensed_query: String,
    /// Query condensation failed and the raw question was used instead.
    pub degraded: bool,
    /// Wall-clock time of the whole chain.
    pub latency_s: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tokens_estimated: bool,
    pub cost_usd: rust_decimal::Decimal,
    pub llm_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condensed {
    pub query: String,
    pub degraded: bool,
    pub usage: Option<CompletionResult>,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("prompt {0} is malformed: {1}")]
    Malformed(String, String),
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{(context|question)\}").unwrap());

/// A prompt resource: a versioned system instruction plus a user template
/// with `{context}` and `{question}` placeholders.
///
/// File layout: a `version: N` line, the system text, a `---` line, then the
/// user template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let bad = |msg: &str| PromptError::Malformed(name.to_string(), msg.to_string());
        let (first, rest) = text.split_once('\n').ok_or_else(|| bad("missing version line"))?;
        let version = first
            .trim()
            .strip_prefix("version:")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("first line must be `version: N`"))?;
        let (system, user) = rest
            .split_once("\n---\n")
            .ok_or_else(|| bad("missing `---` separator"))?;
        let user = user.trim_end();
        if !user.contains("{question}") {
            return Err(bad("user template has no {question} placeholder"));
        }
        Ok(Self {
            name: name.to_string(),
            version,
            system: system.trim().to_string(),
            user: user.to_string(),
        })
    }

    /// Substitutes the placeholders in one pass, so placeholder-like text in
    /// the substituted values is left alone.
    pub fn fill(&self, context: &str, question: &str) -> String {
        PLACEHOLDER
            .replace_all(&self.user, |caps: &regex::Captures| match &caps[1] {
                "context" => context.to_string(),
                _ => question.to_string(),
            })
            .into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub qa_binary: PromptTemplate,
    pub qa_long: PromptTemplate,
    pub chat_history: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        let parse = |name, text| PromptTemplate::parse(name, text).expect("bundled prompt is valid");
        Self {
            qa_binary: parse("qa_binary", include_str!("../prompts/qa_binary.txt")),
            qa_long: parse("qa_long", include_str!("../prompts/qa_long.txt")),
            chat_history: parse("chat_history", include_str!("../prompts/chat_history.txt")),
        }
    }
}

impl PromptSet {
    /// Bundled prompts, with any of `qa_binary.txt`, `qa_long.txt` and
    /// `chat_history.txt` found in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for (name, slot) in [
            ("qa_binary", &mut set.qa_binary),
            ("qa_long", &mut set.qa_long),
            ("chat_history", &mut set.chat_history),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io(path.display().to_string(), e))?;
                *slot = PromptTemplate::parse(name, &text)?;
            }
        }
        Ok(set)
    }

    pub fn for_mode(&self, mode: AnswerMode) -> &PromptTemplate {
        match mode {
            AnswerMode::Binary => &self.qa_binary,
            AnswerMode::LongForm => &self.qa_long,
        }
    }
}

/// Stuffs retrieved chunks into one context block, in hit order.
pub fn format_context(hits: &[RetrievalHit]) -> String {
    if hits.is_empty() {
        return NO_CONTEXT.to_string();
    }
    hits.iter()
        .enumerate()
        .map(|(i, h)| format!("[Source {}: {}]\n{}", i + 1, h.doc_id(), h.chunk_text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Yes,
    No,
    DoNotKnow,
    Unparsed,
}

impl BinaryLabel {
    /// A definite or substantive answer, as opposed to a hedge.
    pub fn is_confident(self) -> bool {
        !matches!(self, BinaryLabel::DoNotKnow)
    }
}

static HEDGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b(do not know|don't know|dont know|cannot (\w+ )?answer|can't (\w+ )?answer|unable to (\w+ )?answer|not enough information)\b",
    )
    .unwrap()
});

/// Classifies a generated answer to a yes/no question.
pub fn parse_binary(answer_text: &str) -> BinaryLabel {
    let text = answer_text.trim().to_lowercase().replace('\u{2019}', "'");
    let leading = text
        .split(|c: char| !c.is_alphanumeric())
        .find(|t| !t.is_empty())
        .unwrap_or("");
    match leading {
        "yes" => BinaryLabel::Yes,
        "no" => BinaryLabel::No,
        _ if HEDGE.is_match(&text) => BinaryLabel::DoNotKnow,
        _ => BinaryLabel::Unparsed,
    }
}

/// Everything the chain needs besides the session. Cheap to clone.
#[derive(Clone)]
pub struct QaEngine {
    pub index: Arc<Index>,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn ChatBackend>,
    pub prompts: Arc<PromptSet>,
    pub clock: Arc<dyn Clock>,
}

impl QaEngine {
    pub fn new(index: Arc<Index>, embedder: Arc<dyn Embedder>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            index,
            embedder,
            backend,
            prompts: Arc::new(PromptSet::default()),
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Rewrites a follow-up question into a standalone search query. Without
    /// history the question is returned as is and the model is not called.
    pub fn condense_query(&self, history: &[ChatTurn], question: &str, model: &ModelConfig) -> Condensed {
        if history.is_empty() {
            return Condensed {
                query: question.to_string(),
                degraded: false,
                usage: None,
            };
        }
        let template = &self.prompts.chat_history;
        let prompt = render_turns(
            model.template_kind,
            &template.system,
            &template.fill("", question),
            history,
        );
        let fallback = |usage| Condensed {
            query: question.to_string(),
            degraded: true,
            usage,
        };
        match complete(self.backend.as_ref(), model, &prompt, self.clock.as_ref()) {
            Ok(result) => {
                let line = result
                    .text
                    .lines()
                    .map(str::trim)
                    .find(|l| !l.is_empty())
                    .map(str::to_string);
                match line {
                    Some(query) => Condensed {
                        query,
                        degraded: false,
                        usage: Some(result),
                    },
                    None => {
                        warn!(model = %model.name, "empty condensed query, using the raw question");
                        fallback(Some(result))
                    }
                }
            }
            Err(e) => {
                warn!(error = %e, "query condensation failed, using the raw question");
                fallback(None)
            }
        }
    }

    pub fn retrieve(&self, query: &str, cfg: &RetrieverConfig) -> Result<Vec<RetrievalHit>, QaError> {
        let vector = self.embedder.embed(query)?;
        Ok(self.index.search(&vector, cfg)?)
    }

    /// Runs the full chain for one question and records the exchange in the
    /// session. On error the session is left unchanged.
    pub fn answer(&self, session: &mut ChatSession, question: &str, mode: AnswerMode) -> Result<Answer, QaError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(QaError::EmptyQuestion);
        }
        let start = self.clock.now();
        let condensed = self.condense_query(&session.turns, question, &session.model);
        let sources = self.retrieve(&condensed.query, &session.retriever)?;
        let template = self.prompts.for_mode(mode);
        let prompt = render_turns(
            session.model.template_kind,
            &template.system,
            &template.fill(&format_context(&sources), question),
            &session.turns,
        );
        let completion = complete(self.backend.as_ref(), &session.model, &prompt, self.clock.as_ref())?;
        let latency_s = self.clock.seconds_since(start);

        let mut answer = Answer {
            text: completion.text.trim().to_string(),
            sources,
            condensed_query: condensed.query,
            degraded: condensed.degraded,
            latency_s,
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
            tokens_estimated: completion.tokens_estimated,
            cost_usd: completion.cost_usd,
            llm_calls: 1,
        };
        if let Some(usage) = condensed.usage {
            answer.prompt_tokens += usage.prompt_tokens;
            answer.completion_tokens += usage.completion_tokens;
            answer.tokens_estimated |= usage.tokens_estimated;
            answer.cost_usd += usage.cost_usd;
            answer.llm_calls += 1;
        } else if !session.turns.is_empty() {
            // condensation was attempted and failed
            answer.llm_calls += 1;
        }
        session.push_exchange(question, &answer.text);
        Ok(answer)
    }
}
