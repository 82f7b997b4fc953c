#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use litrag::chunker::{split, ChunkConfig};
use litrag::corpus::{ingest, read_raw};
use litrag::embedding::{Embedder, HashEmbedder};
use litrag::llm::{BackendReply, ChatMessage, ModelConfig, Pricing, Prompt, ScriptedBackend};
use litrag::qa::{QaEngine, Role};
use litrag::vector_store::{build_index, Index};

pub const FIXTURE_DIM: usize = 256;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Ingests the fixture corpus, chunks it with the default settings and
/// indexes it with the hashing embedder.
pub fn fixture_index() -> (Index, HashEmbedder) {
    let outcome = ingest(read_raw(&fixture("raw_corpus.jsonl")).unwrap());
    let cfg = ChunkConfig::default();
    let chunks: Vec<_> = outcome.documents.iter().flat_map(|d| split(d, &cfg)).collect();
    let embedder = HashEmbedder::new(FIXTURE_DIM, 42);
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_texts(&texts).unwrap();
    let index = build_index(&chunks, vectors, embedder.info()).unwrap();
    (index, embedder)
}

/// Content of the last user turn: the last user message, or the text of
/// the last `[INST]` block of a raw prompt.
pub fn last_user(prompt: &Prompt) -> String {
    match prompt {
        Prompt::Messages(m) => m
            .iter()
            .rev()
            .find(|m: &&ChatMessage| m.role == Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default(),
        Prompt::Raw(text) => {
            let block = text.rsplit("[INST] ").next().unwrap_or_default();
            block.trim_end_matches(" [/INST]").to_string()
        }
    }
}

fn question_of(user: &str) -> String {
    user.rsplit("Question: ")
        .next()
        .unwrap_or(user)
        .trim_end_matches("Answer:")
        .trim()
        .to_string()
}

/// Deterministic stand-in for a chat model: condenses by prefixing
/// "search:", answers binary questions "no" when they contain "always",
/// "do not know" when they mention "unlimited", "yes" otherwise, and
/// answers long questions by quoting the question back.
pub fn stub_reply(prompt: &Prompt) -> BackendReply {
    let user = last_user(prompt);
    let text = prompt.text();
    if text.contains("standalone search query") {
        return BackendReply::text(format!("search: {}", user.trim()));
    }
    let question = question_of(&user);
    if text.contains("\"do not know\"") {
        let q = question.to_lowercase();
        let label = if q.contains("always") {
            "no"
        } else if q.contains("unlimited") {
            "do not know"
        } else {
            "yes"
        };
        return BackendReply::text(label);
    }
    BackendReply::text(format!("The abstracts discuss: {question}"))
}

pub fn stub_backend() -> ScriptedBackend {
    ScriptedBackend::new(|_, prompt| Ok(stub_reply(prompt)))
}

pub fn stub_model(name: &str) -> ModelConfig {
    let mut m = ModelConfig::new(name, "http://127.0.0.1:9");
    m.pricing = Pricing::default();
    m
}

pub fn engine_with(backend: Arc<ScriptedBackend>) -> QaEngine {
    let (index, embedder) = fixture_index();
    QaEngine::new(Arc::new(index), Arc::new(embedder), backend)
}
